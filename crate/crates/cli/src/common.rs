//! Helpers shared by the subcommands.

use std::path::{Path, PathBuf};

use gdc_core::grid::conv2d_circular;
use gdc_core::io::{read_image, read_kernel, write_atomic};
use gdc_core::neural::an_normalize;
use gdc_core::tasks::{load_dataset, synth, DatasetItem, TaskKind};
use gdc_core::{ConvNetModule, Role, SeedStreams};

use crate::config::RunConfig;
use crate::error::CliError;

pub struct Ctx {
    pub cfg: RunConfig,
    pub out: PathBuf,
    /// `--out` was passed explicitly.
    pub out_given: bool,
    pub quiet: bool,
}

impl Ctx {
    pub fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }

    /// Creates the output directory and echoes the effective config into it.
    pub fn prepare_out(&self) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.out)?;
        write_text(&self.out.join("config.txt"), &self.cfg.echo())
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    Ok(write_atomic(path, text.as_bytes())?)
}

fn load_module(path: &Path, role: Role, delta: Option<f64>) -> Result<ConvNetModule, CliError> {
    let m = ConvNetModule::load(path)
        .map_err(|e| CliError::Input(format!("cannot load checkpoint {}: {e}", path.display())))?;
    if m.role() != role {
        return Err(CliError::Input(format!(
            "{} holds a {} module, expected {}",
            path.display(),
            m.role().name(),
            role.name()
        )));
    }
    Ok(match delta {
        Some(d) => an_normalize(&m, d)?,
        None => m,
    })
}

/// Modules named by the `gm`/`dm` keys, architecture-normalized when
/// `delta` is set.
pub fn modules(cfg: &RunConfig) -> Result<(Option<ConvNetModule>, Option<ConvNetModule>), CliError> {
    let delta = cfg.opt_float("delta");
    let gm = cfg.path("gm").map(|p| load_module(&p, Role::Gm, delta)).transpose()?;
    let dm = cfg.path("dm").map(|p| load_module(&p, Role::Dm, delta)).transpose()?;
    Ok((gm, dm))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    Noise,
    Blur,
    Mask,
    TextMask,
    Rain,
}

impl SynthKind {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        Ok(match s {
            "noise" => SynthKind::Noise,
            "blur" => SynthKind::Blur,
            "mask" => SynthKind::Mask,
            "text_mask" => SynthKind::TextMask,
            "rain" => SynthKind::Rain,
            other => {
                return Err(CliError::Input(format!(
                    "synth_kind must be noise, blur, mask, text_mask or rain, got {other:?}"
                )))
            }
        })
    }

    pub fn for_task(task: TaskKind) -> Self {
        match task {
            TaskKind::Deconvolution | TaskKind::BlindDeblur => SynthKind::Blur,
            TaskKind::Interpolation => SynthKind::Mask,
            TaskKind::Smoothing => SynthKind::Noise,
            TaskKind::RainPdm => SynthKind::Rain,
        }
    }
}

/// One seeded synthetic degraded/ground-truth pair.
pub fn synth_item(cfg: &RunConfig, kind: SynthKind, index: u64) -> Result<DatasetItem, CliError> {
    let size = cfg.usize("size");
    if size < 8 {
        return Err(CliError::Input(format!("size must be at least 8, got {size}")));
    }
    let streams = SeedStreams::new(cfg.seed());
    let gt = synth::shapes(size, size, &mut streams.indexed("image", index));
    let mut noise = streams.indexed("noise", index);
    let mut mask_rng = streams.indexed("mask", index);
    let sigma = cfg.float("sigma");
    let (y, kernel, mask) = match kind {
        SynthKind::Noise => (synth::add_noise(&gt, sigma, &mut noise)?, None, None),
        SynthKind::Blur => {
            let k = cfg.blur()?;
            let y = synth::add_noise(&conv2d_circular(&gt, &k)?, sigma, &mut noise)?;
            (y, Some(k), None)
        }
        SynthKind::Mask | SynthKind::TextMask => {
            let m = if kind == SynthKind::Mask {
                synth::random_mask(size, size, cfg.float("missing_rate"), &mut mask_rng)?
            } else {
                synth::text_mask(size, size, &mut mask_rng)
            };
            (gt.zip_map(&m, |a, b| a * b), None, Some(m))
        }
        SynthKind::Rain => (synth::add_rain(&gt, cfg.float("rain_density"), &mut noise)?, None, None),
    };
    Ok(DatasetItem {
        name: format!("img_{index:03}"),
        path: PathBuf::new(),
        y,
        kernel,
        mask,
        ground_truth: Some(gt),
    })
}

/// Items named by `input` (an image or a dataset directory), or one
/// synthesized demo item when `input` is empty.
pub fn input_items(cfg: &RunConfig) -> Result<(Vec<DatasetItem>, bool), CliError> {
    let Some(input) = cfg.path("input") else {
        let kind = SynthKind::for_task(cfg.task()?);
        return Ok((vec![synth_item(cfg, kind, 0)?], true));
    };
    if input.is_dir() {
        let items = load_dataset(&input)?;
        if items.is_empty() {
            return Err(CliError::Input(format!("no images in {}", input.display())));
        }
        return Ok((items, false));
    }
    if !input.is_file() {
        return Err(CliError::Input(format!("input {} does not exist", input.display())));
    }
    let kernel = cfg.path("kernel").map(|p| read_kernel(&p)).transpose()?;
    let mask = cfg.path("mask").map(|p| read_image(&p)).transpose()?;
    let ground_truth = cfg.path("ground_truth").map(|p| read_image(&p)).transpose()?;
    Ok((
        vec![DatasetItem {
            name: input
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("input")
                .to_string(),
            y: read_image(&input)?,
            path: input,
            kernel,
            mask,
            ground_truth,
        }],
        false,
    ))
}
