//! `gdc train`: fit one module on a clean corpus and checkpoint it.

use std::fmt::Write as _;

use gdc_core::neural::{an_normalize, train_dm, train_gm, TrainConfig};
use gdc_core::tasks::{load_dataset, synth};
use gdc_core::{ConvNetModule, ImageGrid, Role, SeedStreams};

use crate::common::{write_text, Ctx};
use crate::error::CliError;

fn corpus(ctx: &Ctx) -> Result<Vec<ImageGrid>, CliError> {
    let cfg = &ctx.cfg;
    match cfg.path("corpus") {
        Some(dir) => {
            if !dir.is_dir() {
                return Err(CliError::Input(format!(
                    "corpus directory {} does not exist",
                    dir.display()
                )));
            }
            // clean images: the ground truth when a dataset provides one
            let items = load_dataset(&dir)?;
            if items.is_empty() {
                return Err(CliError::Input(format!("no images in corpus {}", dir.display())));
            }
            Ok(items.into_iter().map(|i| i.ground_truth.unwrap_or(i.y)).collect())
        }
        None => {
            let streams = SeedStreams::new(cfg.seed());
            let size = cfg.usize("size");
            Ok((0..cfg.int("count"))
                .map(|i| synth::shapes(size, size, &mut streams.indexed("corpus", i)))
                .collect())
        }
    }
}

pub fn cmd_train(ctx: &Ctx, role: Role) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let images = corpus(ctx)?;
    ctx.prepare_out()?;
    let mut rng = SeedStreams::new(cfg.seed()).stream("init");
    let width = cfg.usize("width");
    let (module, report) = match role {
        Role::Gm => {
            let init = ConvNetModule::generative(cfg.usize("gm_depth"), width, &mut rng)?;
            train_gm(&init, &images, &cfg.train_config(TrainConfig::gm_default()))?
        }
        Role::Dm => {
            let init = ConvNetModule::discriminative(cfg.usize("dm_depth"), width, &mut rng)?;
            train_dm(&init, &images, &cfg.train_config(TrainConfig::dm_default()))?
        }
    };
    let module = match cfg.opt_float("delta") {
        Some(d) => an_normalize(&module, d)?,
        None => module,
    };
    let name = role.name().to_lowercase();
    module.save(&ctx.out.join(format!("{name}.gdcw")))?;
    let mut csv = String::from("epoch,loss\n");
    for (e, l) in report.losses.iter().enumerate() {
        let _ = writeln!(csv, "{e},{l}");
    }
    if let Some(acc) = report.accuracy {
        let _ = writeln!(csv, "# accuracy={acc}");
    }
    write_text(&ctx.out.join(format!("{name}_loss.csv")), &csv)?;
    let first = report.losses.first().copied().unwrap_or(f64::NAN);
    let last = report.losses.last().copied().unwrap_or(f64::NAN);
    ctx.say(format!(
        "{}: {} parameters, loss {first:.6e} -> {last:.6e}{}",
        role.name(),
        module.param_count(),
        report
            .accuracy
            .map(|a| format!(", accuracy {a:.3}"))
            .unwrap_or_default()
    ));
    Ok(())
}
