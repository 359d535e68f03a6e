//! `gdc certify`: check a saved trace, or a pair of module checkpoints.

use std::path::Path;

use gdc_core::certify::{
    certify_condition1, certify_contraction, certify_descent, certify_fixed_point, Certificate, ContractionProbe,
};
use gdc_core::neural::estimate_lipschitz;
use gdc_core::propagate::{Cascade, Objective, PropagationTrace, TraceKind};
use gdc_core::{Fidelity, ImageGrid, SeedStreams};
use rand::Rng;

use crate::common::{modules, synth_item, write_text, Ctx, SynthKind};
use crate::error::CliError;

fn finish(ctx: &Ctx, certs: &[Certificate]) -> Result<(), CliError> {
    let text: Vec<String> = certs.iter().map(|c| c.to_text()).collect();
    let text = text.join("\n");
    if !ctx.quiet {
        print!("{text}");
    }
    if ctx.out_given {
        ctx.prepare_out()?;
        write_text(&ctx.out.join("certificate.txt"), &text)?;
    }
    if certs.iter().all(|c| c.passed()) {
        Ok(())
    } else {
        Err(CliError::Certification)
    }
}

pub fn cmd_certify_trace(ctx: &Ctx, path: &Path) -> Result<(), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read trace {}: {e}", path.display())))?;
    let trace = PropagationTrace::from_csv(&text)?;
    if trace.is_empty() {
        return Err(CliError::Input(format!("trace {} has no steps", path.display())));
    }
    let given = ctx.cfg.opt_float("lipschitz");
    let cert = match trace.kind {
        TraceKind::Fdm => {
            // β = (L + γ)/2 pins L when it is not given
            let r = &trace.records[0];
            let l = given.unwrap_or_else(|| 2.0 * r.beta.unwrap_or(0.0) - r.gamma);
            certify_descent(&trace, l)?
        }
        TraceKind::Pdm => {
            let l = given
                .ok_or_else(|| CliError::Input("a partially defined trace needs the lipschitz config key".into()))?;
            certify_fixed_point(&trace, ctx.cfg.float("l_scale") * l, None)?
        }
    };
    finish(ctx, &[cert])
}

/// Condition 1 on seeded probes, plus the contraction condition against a
/// deconvolution fidelity built from the configured blur.
pub fn cmd_certify_modules(ctx: &Ctx) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let (gm, dm) = modules(cfg)?;
    if gm.is_none() && dm.is_none() {
        return Err(CliError::Input("certify needs --trace or at least one of gm/dm".into()));
    }
    let alpha = cfg.float("alpha_d");
    let cascade = Cascade {
        gm: gm.as_ref(),
        dm: dm.as_ref(),
        alpha_d: alpha,
    };
    let size = cfg.usize("size");
    let mut rng = SeedStreams::new(cfg.seed()).stream("probe");
    let probes: Vec<ImageGrid> = (0..cfg.int("probes"))
        .map(|_| ImageGrid::from_fn(size, size, |_, _| rng.random::<f64>()))
        .collect();
    let schedule = cfg.schedule()?;
    let gammas: Vec<f64> = (0..cfg.usize("max_iters").max(1)).map(|t| schedule.at(t)).collect();
    let cond = certify_condition1(&cascade, &probes, &gammas, cfg.opt_float("c_budget"))?;

    let seed = cfg.seed();
    let delta_g = gm
        .as_ref()
        .map(|m| estimate_lipschitz(m, 200, seed))
        .transpose()?
        .map_or(0.0, |e| e.max_ratio);
    let delta_d = dm
        .as_ref()
        .map(|m| estimate_lipschitz(m, 200, seed.wrapping_add(1)))
        .transpose()?
        .map_or(0.0, |e| alpha * e.max_ratio);
    let item = synth_item(cfg, SynthKind::Blur, 0)?;
    let fidelity = Fidelity::deconv(item.y.clone(), item.kernel.clone().expect("blur item has a kernel"))?;
    let obj = Objective::pdm(fidelity.clone(), schedule);
    let probe = ContractionProbe {
        objective: &obj,
        u0: &item.y,
        cascade,
        steps: cfg.usize("max_iters"),
    };
    let contraction = certify_contraction(&fidelity, delta_g, delta_d, None, Some(probe))?;
    finish(ctx, &[cond, contraction])
}
