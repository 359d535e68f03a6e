//! `gdc run`: restore one image, a dataset directory or a synthesized demo.

use std::fmt::Write as _;
use std::path::Path;

use gdc_core::io::{write_image, write_kernel};
use gdc_core::propagate::PropagationTrace;
use gdc_core::tasks::{run_blind_deblur, run_task, DatasetItem, TaskError, TaskKind, TaskOutcome, TaskSpec};
use gdc_core::ConvNetModule;
use rayon::prelude::*;

use crate::common::{input_items, modules, write_text, Ctx};
use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Clone, Default)]
struct Summary {
    iterations: usize,
    accept_rate: f64,
    certified: bool,
    psnr: Option<(f64, f64, f64, f64)>,
    kernel_error: Option<f64>,
}

fn task_spec(
    cfg: &RunConfig,
    item: &DatasetItem,
    gm: &Option<ConvNetModule>,
    dm: &Option<ConvNetModule>,
) -> Result<TaskSpec, CliError> {
    let kind = cfg.task()?;
    let mut spec = TaskSpec::new(kind, item.y.clone());
    if kind != TaskKind::BlindDeblur {
        spec.kernel = item.kernel.clone();
    }
    spec.mask = item.mask.clone();
    spec.ground_truth = item.ground_truth.clone();
    if let Some(l) = cfg.opt_float("lambda") {
        spec.lambda = l;
    }
    spec.schedule = cfg.schedule()?;
    spec.stop = cfg.stop();
    spec.init = cfg.init()?;
    spec.alpha_d = cfg.float("alpha_d");
    spec.l_scale = cfg.float("l_scale");
    spec.gm = gm.clone();
    spec.dm = dm.clone();
    spec.blind.kernel_size = cfg.usize("kernel_size");
    spec.blind.mu = cfg.float("kernel_mu");
    spec.blind.levels = cfg.usize("blind_levels");
    spec.blind.inner_rounds = cfg.usize("blind_rounds");
    spec.validate()?;
    Ok(spec)
}

fn write_traces(dir: &Path, traces: &[PropagationTrace], timing: bool) -> Result<(), CliError> {
    let (last, inner) = traces.split_last().expect("at least one trace");
    for (i, t) in inner.iter().enumerate() {
        write_text(&dir.join(format!("trace_{i:03}.csv")), &t.to_csv(timing))?;
    }
    write_text(&dir.join("trace.csv"), &last.to_csv(timing))
}

fn metrics_text(kind: TaskKind, s: &Summary) -> String {
    let mut t = String::new();
    let _ = writeln!(t, "task = {}", kind.name());
    let _ = writeln!(t, "iterations = {}", s.iterations);
    let _ = writeln!(t, "accept_rate = {:.6}", s.accept_rate);
    let _ = writeln!(t, "certified = {}", s.certified);
    if let Some((psnr, ssim, pin, sin)) = s.psnr {
        let _ = writeln!(t, "psnr = {psnr:.6}");
        let _ = writeln!(t, "ssim = {ssim:.6}");
        let _ = writeln!(t, "psnr_input = {pin:.6}");
        let _ = writeln!(t, "ssim_input = {sin:.6}");
        let _ = writeln!(t, "psnr_gain = {:.6}", psnr - pin);
    }
    if let Some(e) = s.kernel_error {
        let _ = writeln!(t, "kernel_error = {e:.6}");
    }
    t
}

fn run_item(
    cfg: &RunConfig,
    item: &DatasetItem,
    dir: &Path,
    synthesized: bool,
    gm: &Option<ConvNetModule>,
    dm: &Option<ConvNetModule>,
) -> Result<Summary, CliError> {
    std::fs::create_dir_all(dir)?;
    let timing = cfg.bool("timing");
    if synthesized {
        write_image(&dir.join("input.pgm"), &item.y)?;
        if let Some(gt) = &item.ground_truth {
            write_image(&dir.join("ground_truth.pgm"), gt)?;
        }
    }
    let spec = task_spec(cfg, item, gm, dm)?;
    let result: Result<TaskOutcome, TaskError> = if spec.kind == TaskKind::BlindDeblur {
        run_blind_deblur(&spec).map(|b| b.outcome)
    } else {
        run_task(&spec)
    };
    let out = match result {
        Ok(o) => o,
        Err(TaskError::Propagation(aborted)) => {
            // keep the partial trace for diagnosis
            write_text(&dir.join("trace.csv"), &aborted.partial.to_csv(timing))?;
            return Err(CliError::Propagation(aborted.to_string()));
        }
        Err(e) => return Err(e.into()),
    };
    write_image(&dir.join("restored.pgm"), &out.u_final)?;
    write_traces(dir, &out.traces, timing)?;
    let certs: Vec<String> = out.certificates.iter().map(|c| c.to_text()).collect();
    write_text(&dir.join("certificate.txt"), &certs.join("\n"))?;
    if let Some(k) = &out.kernel {
        write_kernel(&dir.join("kernel.txt"), k)?;
    }
    let summary = Summary {
        iterations: out.iterations(),
        accept_rate: out.accept_rate(),
        certified: out.certified(),
        psnr: out.metrics.map(|m| (m.psnr, m.ssim, m.psnr_input, m.ssim_input)),
        kernel_error: match (&out.kernel, &item.kernel) {
            (Some(est), Some(truth)) if spec.kind == TaskKind::BlindDeblur => Some(est.l2_distance(truth)),
            _ => None,
        },
    };
    write_text(&dir.join("metrics.txt"), &metrics_text(spec.kind, &summary))?;
    Ok(summary)
}

fn mean_summary(all: &[Summary]) -> Summary {
    let n = all.len() as f64;
    let with_psnr: Vec<_> = all.iter().filter_map(|s| s.psnr).collect();
    let kerr: Vec<f64> = all.iter().filter_map(|s| s.kernel_error).collect();
    let m = with_psnr.len() as f64;
    Summary {
        iterations: all.iter().map(|s| s.iterations).sum::<usize>() / all.len(),
        accept_rate: all.iter().map(|s| s.accept_rate).sum::<f64>() / n,
        certified: all.iter().all(|s| s.certified),
        psnr: (!with_psnr.is_empty()).then(|| {
            with_psnr.iter().fold((0.0, 0.0, 0.0, 0.0), |a, b| {
                (a.0 + b.0 / m, a.1 + b.1 / m, a.2 + b.2 / m, a.3 + b.3 / m)
            })
        }),
        kernel_error: (!kerr.is_empty()).then(|| kerr.iter().sum::<f64>() / kerr.len() as f64),
    }
}

pub fn cmd_run(ctx: &Ctx) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let kind = cfg.task()?;
    let (gm, dm) = modules(cfg)?;
    let (items, synthesized) = input_items(cfg)?;
    ctx.prepare_out()?;
    let single = items.len() == 1;
    let results: Vec<Result<Summary, CliError>> = items
        .par_iter()
        .map(|item| {
            let dir = if single {
                ctx.out.clone()
            } else {
                ctx.out.join(&item.name)
            };
            run_item(cfg, item, &dir, synthesized, &gm, &dm)
        })
        .collect();
    let mut summaries = Vec::with_capacity(results.len());
    for (item, r) in items.iter().zip(results) {
        let s = r?;
        if !single {
            ctx.say(format!("{}: {}", item.name, describe(&s)));
        }
        summaries.push(s);
    }
    let total = mean_summary(&summaries);
    if !single {
        write_text(&ctx.out.join("metrics.txt"), &metrics_text(kind, &total))?;
    }
    ctx.say(format!(
        "{} ({} image(s)): {}",
        kind.name(),
        summaries.len(),
        describe(&total)
    ));
    if total.certified {
        Ok(())
    } else {
        Err(CliError::Certification)
    }
}

fn describe(s: &Summary) -> String {
    let mut d = format!(
        "{} iterations, accept rate {:.2}, certified {}",
        s.iterations, s.accept_rate, s.certified
    );
    if let Some((psnr, _, pin, _)) = s.psnr {
        let _ = write!(d, ", psnr {pin:.2} -> {psnr:.2} dB");
    }
    if let Some(e) = s.kernel_error {
        let _ = write!(d, ", kernel error {e:.4}");
    }
    d
}
