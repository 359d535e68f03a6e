//! `gdc bench`: mean PSNR/SSIM of each module stack on a synthetic
//! deconvolution suite.

use std::fmt::Write as _;
use std::time::Instant;

use gdc_core::metrics::{psnr, ssim};
use gdc_core::propagate::{initial_point, run_scheme, Scheme};
use gdc_core::{ConvNetModule, SeedStreams, TaskKind, TaskSpec};

use crate::common::{modules, synth_item, write_text, Ctx, SynthKind};
use crate::error::CliError;

pub fn cmd_bench(ctx: &Ctx) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let (gm, dm) = modules(cfg)?;
    // missing modules act as the identity
    let mut rng = SeedStreams::new(cfg.seed()).stream("init");
    let gm = match gm {
        Some(m) => m,
        None => ConvNetModule::generative(1, 1, &mut rng)?.zeroed(),
    };
    let dm = match dm {
        Some(m) => m,
        None => ConvNetModule::discriminative(1, 1, &mut rng)?.zeroed(),
    };
    let items = (0..cfg.int("count"))
        .map(|i| synth_item(cfg, SynthKind::Blur, i))
        .collect::<Result<Vec<_>, _>>()?;
    if items.is_empty() {
        return Err(CliError::Input("bench needs count >= 1".into()));
    }
    ctx.prepare_out()?;
    let n = items.len() as f64;
    let iters = cfg.usize("max_iters");
    let mut rows = vec![("input".to_string(), 0.0, 0.0, 0.0)];
    for it in &items {
        let gt = it.ground_truth.as_ref().expect("synthetic items carry ground truth");
        rows[0].1 += psnr(&it.y, gt)? / n;
        rows[0].2 += ssim(&it.y, gt)? / n;
    }
    for scheme in Scheme::ALL {
        let start = Instant::now();
        let (mut p, mut s) = (0.0, 0.0);
        for it in &items {
            let mut spec = TaskSpec::new(TaskKind::Deconvolution, it.y.clone());
            spec.kernel = it.kernel.clone();
            if let Some(l) = cfg.opt_float("lambda") {
                spec.lambda = l;
            }
            spec.schedule = cfg.schedule()?;
            spec.init = cfg.init()?;
            let obj = spec.objective()?;
            let u0 = initial_point(&obj, spec.init)?;
            let u = run_scheme(&obj, &u0, &gm, &dm, cfg.float("alpha_d"), scheme, iters)
                .map_err(|e| CliError::Propagation(e.to_string()))?;
            let gt = it.ground_truth.as_ref().expect("synthetic items carry ground truth");
            p += psnr(&u, gt)? / n;
            s += ssim(&u, gt)? / n;
        }
        rows.push((scheme.name().to_string(), p, s, start.elapsed().as_secs_f64()));
    }
    let mut csv = String::from("scheme,psnr,ssim,seconds\n");
    let mut table = format!("{:<8}{:>10}{:>10}{:>10}\n", "scheme", "psnr", "ssim", "seconds");
    for (name, p, s, t) in &rows {
        let _ = writeln!(csv, "{name},{p},{s},{t}");
        let _ = writeln!(table, "{name:<8}{p:>10.3}{s:>10.4}{t:>10.2}");
    }
    write_text(&ctx.out.join("bench.csv"), &csv)?;
    ctx.say(table.trim_end());
    Ok(())
}
