//! The guided propagation engine: generative, discriminative and corrective
//! modules chained per iteration, with an accept/reject guard.
//!
//! For fully defined objectives (explicit prior) the guard compares
//! objective values and the iterate is finished by a proximal-gradient
//! step. For partially defined objectives (fidelity only) the corrective
//! output is accepted when its fidelity gradient is below the gradient
//! Lipschitz constant, otherwise the iterate stays put.

use std::fmt::Write as _;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::fidelity::Fidelity;
use crate::grid::ImageGrid;
use crate::neural::{dm_apply, gm_apply, ConvNetModule, DEFAULT_ALPHA_D};
use crate::prox::{prox_prior, PriorSpec};

pub const TRACE_HEADER: &str = "t,objective,residual,branch,gamma,beta,d_t,ms";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaSchedule {
    pub gamma0: f64,
    pub eta: f64,
}

impl Default for GammaSchedule {
    fn default() -> Self {
        Self { gamma0: 1.0, eta: 1.5 }
    }
}

impl GammaSchedule {
    pub fn new(gamma0: f64, eta: f64) -> Result<Self> {
        if !(gamma0 > 0.0) || !gamma0.is_finite() {
            return Err(Error::param(format!("gamma0 must be > 0, got {gamma0}")));
        }
        if !(eta > 1.0) || !eta.is_finite() {
            return Err(Error::param(format!("eta must be > 1, got {eta}")));
        }
        Ok(Self { gamma0, eta })
    }

    /// `γ^t`, built by repeated multiplication so that
    /// `at(t + 1) == eta * at(t)` holds bit for bit.
    pub fn at(&self, t: usize) -> f64 {
        (0..t).fold(self.gamma0, |g, _| g * self.eta)
    }
}

#[derive(Debug, Clone)]
pub struct Objective {
    pub fidelity: Fidelity,
    pub prior: Option<PriorSpec>,
    pub schedule: GammaSchedule,
    /// Multiplies `L` in the partially defined acceptance test.
    pub l_scale: f64,
}

impl Objective {
    pub fn fdm(fidelity: Fidelity, prior: PriorSpec, schedule: GammaSchedule) -> Self {
        Self {
            fidelity,
            prior: Some(prior),
            schedule,
            l_scale: 1.0,
        }
    }

    pub fn pdm(fidelity: Fidelity, schedule: GammaSchedule) -> Self {
        Self {
            fidelity,
            prior: None,
            schedule,
            l_scale: 1.0,
        }
    }

    pub fn is_fdm(&self) -> bool {
        self.prior.is_some()
    }

    pub fn lipschitz(&self) -> f64 {
        self.fidelity.lipschitz()
    }

    /// `Ψ = f + φ` for fully defined objectives, `f` otherwise.
    pub fn value(&self, u: &ImageGrid) -> Result<f64> {
        let f = self.fidelity.eval(u)?;
        Ok(match &self.prior {
            Some(p) => f + p.value(u)?,
            None => f,
        })
    }

    fn prox(&self, x: &ImageGrid, gamma: f64) -> Result<ImageGrid> {
        match &self.prior {
            Some(p) => prox_prior(x, p, gamma),
            None => Ok(x.clone()),
        }
    }

    /// `prox(x − ∇f(x)/γ; γ)`, or the plain gradient step without a prior.
    pub fn forward_backward(&self, x: &ImageGrid, gamma: f64) -> Result<ImageGrid> {
        let g = self.fidelity.grad(x)?;
        self.prox(&x.axpy(-1.0 / gamma, &g), gamma)
    }
}

/// Learned modules for one propagation. Absent modules act as identity.
#[derive(Debug, Clone, Copy)]
pub struct Cascade<'a> {
    pub gm: Option<&'a ConvNetModule>,
    pub dm: Option<&'a ConvNetModule>,
    pub alpha_d: f64,
}

impl<'a> Cascade<'a> {
    pub fn new(gm: &'a ConvNetModule, dm: &'a ConvNetModule) -> Self {
        Self {
            gm: Some(gm),
            dm: Some(dm),
            alpha_d: DEFAULT_ALPHA_D,
        }
    }

    pub fn empty() -> Self {
        Self {
            gm: None,
            dm: None,
            alpha_d: DEFAULT_ALPHA_D,
        }
    }

    pub fn with_alpha(mut self, alpha_d: f64) -> Self {
        self.alpha_d = alpha_d;
        self
    }

    /// `(u_g, u_d)`.
    pub fn apply(&self, u: &ImageGrid, t: usize) -> Result<(ImageGrid, ImageGrid)> {
        let ug = match self.gm {
            Some(m) => finite(gm_apply(m, u)?, "generative module", t)?,
            None => u.clone(),
        };
        let ud = match self.dm {
            Some(m) => finite(dm_apply(m, &ug, self.alpha_d)?, "discriminative module", t)?,
            None => ug.clone(),
        };
        Ok((ug, ud))
    }
}

fn finite(u: ImageGrid, stage: &'static str, iteration: usize) -> Result<ImageGrid> {
    if u.is_finite() {
        Ok(u)
    } else {
        Err(Error::NonFinite { stage, iteration })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Accepted,
    Rejected,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Accepted => "accepted",
            Branch::Rejected => "rejected",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceKind {
    Fdm,
    Pdm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    /// `Ψ(u^t)` or `f(u^t)`.
    pub objective: f64,
    /// `‖u^{t+1} − u^t‖`
    pub residual: f64,
    pub branch: Branch,
    pub gamma: f64,
    /// `(L + γ^t)/2`, fully defined traces only.
    pub beta: Option<f64>,
    /// `‖u^{t+1} − v^t‖²`, fully defined traces only.
    pub d_t: Option<f64>,
    pub ms: f64,
    /// `‖u_d − u^t‖`, the displacement produced by the learned modules.
    pub module_shift: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropagationTrace {
    pub kind: TraceKind,
    pub records: Vec<StepRecord>,
    /// Objective at the last iterate, after the final step.
    pub final_objective: Option<f64>,
}

impl PropagationTrace {
    pub fn new(kind: TraceKind) -> Self {
        Self {
            kind,
            records: Vec::new(),
            final_objective: None,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn accept_rate(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        let n = self.records.iter().filter(|r| r.branch == Branch::Accepted).count();
        n as f64 / self.records.len() as f64
    }

    /// CSV with the fixed header. The final objective and the module
    /// shifts follow as `#` comment lines so the columns stay fixed.
    pub fn to_csv(&self, timing: bool) -> String {
        let mut s = String::from(TRACE_HEADER);
        s.push('\n');
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.t,
                r.objective,
                r.residual,
                r.branch.as_str(),
                r.gamma,
                opt(r.beta),
                opt(r.d_t),
                if timing { r.ms } else { 0.0 }
            );
        }
        if let Some(f) = self.final_objective {
            let _ = writeln!(s, "# final_objective={f}");
        }
        let shifts: Vec<String> = self.records.iter().map(|r| r.module_shift.to_string()).collect();
        let _ = writeln!(s, "# module_shift={}", shifts.join(";"));
        s
    }

    /// Parses [`to_csv`](Self::to_csv) output. The trace kind is inferred
    /// from the presence of the `beta` column values.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == TRACE_HEADER => {}
            Some(h) => return Err(Error::Trace(format!("unexpected header {h:?}"))),
            None => return Err(Error::Trace("empty trace file".into())),
        }
        let mut records = Vec::new();
        let mut final_objective = None;
        let mut shifts: Option<Vec<f64>> = None;
        for (n, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                let meta = meta.trim();
                if let Some(v) = meta.strip_prefix("final_objective=") {
                    final_objective = Some(parse_f(v, n)?);
                } else if let Some(v) = meta.strip_prefix("module_shift=") {
                    shifts = Some(if v.is_empty() {
                        Vec::new()
                    } else {
                        v.split(';').map(|x| parse_f(x, n)).collect::<Result<_>>()?
                    });
                }
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 8 {
                return Err(Error::Trace(format!(
                    "line {}: expected 8 columns, got {}",
                    n + 2,
                    cols.len()
                )));
            }
            let opt = |s: &str| -> Result<Option<f64>> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    parse_f(s, n).map(Some)
                }
            };
            let branch = match cols[3] {
                "accepted" => Branch::Accepted,
                "rejected" => Branch::Rejected,
                b => return Err(Error::Trace(format!("line {}: bad branch {b:?}", n + 2))),
            };
            records.push(StepRecord {
                t: cols[0]
                    .parse()
                    .map_err(|_| Error::Trace(format!("line {}: bad iteration index", n + 2)))?,
                objective: parse_f(cols[1], n)?,
                residual: parse_f(cols[2], n)?,
                branch,
                gamma: parse_f(cols[4], n)?,
                beta: opt(cols[5])?,
                d_t: opt(cols[6])?,
                ms: parse_f(cols[7], n)?,
                module_shift: f64::NAN,
            });
        }
        if records.is_empty() {
            return Err(Error::Trace("trace has no rows".into()));
        }
        if let Some(sh) = shifts {
            if sh.len() == records.len() {
                records.iter_mut().zip(sh).for_each(|(r, s)| r.module_shift = s);
            } else {
                return Err(Error::Trace("module_shift count does not match rows".into()));
            }
        }
        let fdm = records.iter().all(|r| r.beta.is_some() && r.d_t.is_some());
        let pdm = records.iter().all(|r| r.beta.is_none() && r.d_t.is_none());
        let kind = match (fdm, pdm) {
            (true, _) => TraceKind::Fdm,
            (_, true) => TraceKind::Pdm,
            _ => return Err(Error::Trace("mixed fully/partially defined rows".into())),
        };
        Ok(Self {
            kind,
            records,
            final_objective,
        })
    }
}

fn parse_f(s: &str, line: usize) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Trace(format!("line {}: bad number {s:?}", line + 2)))
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub u_next: ImageGrid,
    pub record: StepRecord,
    /// Objective at `u_next`, reused as the next step's `objective`.
    pub objective_next: f64,
}

/// One guarded step for a fully defined objective.
///
/// `objective_t` must equal `Ψ(u_t)`; [`run`] threads it through. The
/// finishing proximal-gradient step uses `γ^t + 2L`, which guarantees
/// `Ψ(u^t) − Ψ(u^{t+1}) ≥ (L + γ^t)/2 · ‖u^{t+1} − v^t‖²` for any prior with
/// an exact proximal map, convex or not.
pub fn step_fdm(
    obj: &Objective,
    u_t: &ImageGrid,
    objective_t: f64,
    cascade: &Cascade,
    t: usize,
) -> Result<StepOutcome> {
    if !obj.is_fdm() {
        return Err(Error::param("step_fdm needs an objective with a prior"));
    }
    let start = Instant::now();
    let gamma = obj.schedule.at(t);
    let l = obj.lipschitz();
    let (_, ud) = cascade.apply(u_t, t)?;
    let uc = finite(obj.forward_backward(&ud, gamma)?, "corrective module", t)?;
    let psi_c = obj.value(&uc)?;
    let (v, branch) = if psi_c.is_finite() && psi_c <= objective_t {
        (uc, Branch::Accepted)
    } else {
        (u_t.clone(), Branch::Rejected)
    };
    let u_next = finite(obj.forward_backward(&v, gamma + 2.0 * l)?, "proximal step", t)?;
    let objective_next = obj.value(&u_next)?;
    if !objective_next.is_finite() {
        return Err(Error::NonFinite {
            stage: "objective",
            iteration: t,
        });
    }
    let record = StepRecord {
        t,
        objective: objective_t,
        residual: u_next.distance(u_t),
        branch,
        gamma,
        beta: Some((l + gamma) / 2.0),
        d_t: Some(u_next.distance(&v).powi(2)),
        ms: start.elapsed().as_secs_f64() * 1e3,
        module_shift: ud.distance(u_t),
    };
    Ok(StepOutcome {
        u_next,
        record,
        objective_next,
    })
}

/// One guarded step for a partially defined objective: accept the
/// penalized solve iff `‖∇f(u_c)‖ ≤ l_scale · L`, else stay at `u_t`.
pub fn step_pdm(
    obj: &Objective,
    u_t: &ImageGrid,
    objective_t: f64,
    cascade: &Cascade,
    t: usize,
) -> Result<StepOutcome> {
    if obj.is_fdm() {
        return Err(Error::param("step_pdm needs an objective without a prior"));
    }
    let start = Instant::now();
    let gamma = obj.schedule.at(t);
    let (_, ud) = cascade.apply(u_t, t)?;
    let uc = finite(obj.fidelity.penalized_solve(&ud, gamma)?, "corrective module", t)?;
    let grad_norm = obj.fidelity.grad(&uc)?.norm();
    let (u_next, branch) = if grad_norm <= obj.l_scale * obj.lipschitz() {
        (uc, Branch::Accepted)
    } else {
        (u_t.clone(), Branch::Rejected)
    };
    let objective_next = match branch {
        Branch::Accepted => obj.value(&u_next)?,
        Branch::Rejected => objective_t,
    };
    let record = StepRecord {
        t,
        objective: objective_t,
        residual: u_next.distance(u_t),
        branch,
        gamma,
        beta: None,
        d_t: None,
        ms: start.elapsed().as_secs_f64() * 1e3,
        module_shift: ud.distance(u_t),
    };
    Ok(StepOutcome {
        u_next,
        record,
        objective_next,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopRule {
    pub max_iters: usize,
    /// Stop once `‖u^{t+1} − u^t‖ ≤ residual_tol`.
    pub residual_tol: Option<f64>,
    /// Stop once `‖u^{t+1} − u^t‖ / ‖u^{t+1}‖ ≤ reconstruction_tol`.
    pub reconstruction_tol: Option<f64>,
}

impl StopRule {
    pub fn iters(max_iters: usize) -> Self {
        Self {
            max_iters,
            residual_tol: None,
            reconstruction_tol: None,
        }
    }

    fn satisfied(&self, rec: &StepRecord, u_next: &ImageGrid) -> bool {
        if let Some(tol) = self.residual_tol {
            if rec.residual <= tol {
                return true;
            }
        }
        if let Some(tol) = self.reconstruction_tol {
            if rec.residual <= tol * u_next.norm().max(f64::MIN_POSITIVE) {
                return true;
            }
        }
        false
    }
}

/// Starting point for a propagation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitChoice {
    Observation,
    /// `argmin f(u) + (γ0/2)‖u − y‖²`
    PenalizedSolve,
}

pub fn initial_point(obj: &Objective, choice: InitChoice) -> Result<ImageGrid> {
    let y = obj.fidelity.observation();
    match choice {
        InitChoice::Observation => Ok(y.clone()),
        InitChoice::PenalizedSolve => obj.fidelity.penalized_solve(y, obj.schedule.gamma0),
    }
}

#[derive(Debug, thiserror::Error)]
#[error("propagation aborted after {} steps: {source}", partial.len())]
pub struct Aborted {
    #[source]
    pub source: Error,
    pub partial: PropagationTrace,
}

/// Iterates the guarded step matching the objective's kind until a stop
/// criterion fires. Residual-based criteria are ignored on rejected
/// partially defined steps, which leave the iterate unchanged by design.
pub fn run(
    obj: &Objective,
    u0: &ImageGrid,
    cascade: &Cascade,
    stop: &StopRule,
) -> std::result::Result<(ImageGrid, PropagationTrace), Aborted> {
    let kind = if obj.is_fdm() { TraceKind::Fdm } else { TraceKind::Pdm };
    let mut trace = PropagationTrace::new(kind);
    let abort = |source: Error, partial: PropagationTrace| Aborted { source, partial };
    if stop.max_iters == 0 {
        return Err(abort(Error::param("max_iters must be at least 1"), trace));
    }
    let mut u = u0.clone();
    let mut objective = match obj.value(&u) {
        Ok(v) => v,
        Err(e) => return Err(abort(e, trace)),
    };
    for t in 0..stop.max_iters {
        let step = match kind {
            TraceKind::Fdm => step_fdm(obj, &u, objective, cascade, t),
            TraceKind::Pdm => step_pdm(obj, &u, objective, cascade, t),
        };
        let out = match step {
            Ok(o) => o,
            Err(e) => {
                trace.final_objective = Some(objective);
                return Err(abort(e, trace));
            }
        };
        let check = kind == TraceKind::Fdm || out.record.branch == Branch::Accepted;
        let done = check && stop.satisfied(&out.record, &out.u_next);
        trace.records.push(out.record);
        u = out.u_next;
        objective = out.objective_next;
        if done {
            break;
        }
    }
    trace.final_objective = Some(objective);
    Ok((u, trace))
}

/// Module stacks compared in ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// `u ← T_G(u)`
    G,
    /// `u ← T_D ∘ T_G(u)`
    Gd,
    /// guarded steps without the discriminative module
    Gc,
    /// full guarded steps
    Gdc,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::G, Scheme::Gd, Scheme::Gc, Scheme::Gdc];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::G => "G",
            Scheme::Gd => "GD",
            Scheme::Gc => "GC",
            Scheme::Gdc => "GDC",
        }
    }
}

/// Runs `iters` stages of the given stack from `u0`.
pub fn run_scheme(
    obj: &Objective,
    u0: &ImageGrid,
    gm: &ConvNetModule,
    dm: &ConvNetModule,
    alpha_d: f64,
    scheme: Scheme,
    iters: usize,
) -> Result<ImageGrid> {
    let full = Cascade::new(gm, dm).with_alpha(alpha_d);
    match scheme {
        Scheme::G | Scheme::Gd => {
            let cascade = if scheme == Scheme::G {
                Cascade { dm: None, ..full }
            } else {
                full
            };
            let mut u = u0.clone();
            for t in 0..iters {
                u = cascade.apply(&u, t)?.1;
            }
            Ok(u)
        }
        Scheme::Gc | Scheme::Gdc => {
            let cascade = if scheme == Scheme::Gc {
                Cascade { dm: None, ..full }
            } else {
                full
            };
            run(obj, u0, &cascade, &StopRule::iters(iters))
                .map(|(u, _)| u)
                .map_err(|a| a.source)
        }
    }
}

/// `T_C ∘ T_D ∘ T_G(u)` at a fixed `γ`, with no guard.
pub fn unguarded_step(obj: &Objective, u: &ImageGrid, cascade: &Cascade, gamma: f64) -> Result<ImageGrid> {
    let (_, ud) = cascade.apply(u, 0)?;
    obj.forward_backward(&ud, gamma)
}
