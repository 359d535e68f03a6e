//! `gdc synth`: write a seeded synthetic dataset directory.

use gdc_core::tasks::write_item;

use crate::common::{synth_item, Ctx, SynthKind};
use crate::error::CliError;

pub fn cmd_synth(ctx: &Ctx) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let kind = SynthKind::parse(cfg.str("synth_kind"))?;
    let rate = cfg.float("missing_rate");
    if !(0.0..1.0).contains(&rate) {
        return Err(CliError::Input(format!("missing_rate must lie in [0, 1), got {rate}")));
    }
    if cfg.float("sigma") < 0.0 {
        return Err(CliError::Input("sigma must be >= 0".into()));
    }
    let items = (0..cfg.int("count"))
        .map(|i| synth_item(cfg, kind, i))
        .collect::<Result<Vec<_>, _>>()?;
    ctx.prepare_out()?;
    for it in &items {
        write_item(
            &ctx.out,
            &it.name,
            &it.y,
            it.ground_truth.as_ref(),
            it.kernel.as_ref(),
            it.mask.as_ref(),
        )?;
    }
    ctx.say(format!(
        "wrote {} {} item(s) to {}",
        items.len(),
        cfg.str("synth_kind"),
        ctx.out.display()
    ));
    Ok(())
}
