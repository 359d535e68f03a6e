//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use gdc_core::neural::TrainConfig;
use gdc_core::propagate::{GammaSchedule, InitChoice, StopRule};
use gdc_core::tasks::TaskKind;
use gdc_core::BlurKernel;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ty {
    Str,
    Float,
    OptFloat,
    Int,
    Bool,
    FloatList,
}

/// Every recognized key with its type and default, in echo order.
const KEYS: &[(&str, Ty, &str)] = &[
    ("task", Ty::Str, "deconvolution"),
    ("input", Ty::Str, ""),
    ("kernel", Ty::Str, ""),
    ("mask", Ty::Str, ""),
    ("ground_truth", Ty::Str, ""),
    ("gm", Ty::Str, ""),
    ("dm", Ty::Str, ""),
    ("corpus", Ty::Str, ""),
    ("seed", Ty::Int, "0"),
    ("lambda", Ty::OptFloat, ""),
    ("gamma0", Ty::Float, "1"),
    ("eta", Ty::Float, "1.5"),
    ("delta", Ty::OptFloat, ""),
    ("alpha_d", Ty::Float, "0.1"),
    ("l_scale", Ty::Float, "1"),
    ("max_iters", Ty::Int, "50"),
    ("residual_tol", Ty::OptFloat, ""),
    ("reconstruction_tol", Ty::OptFloat, ""),
    ("init", Ty::Str, "observation"),
    ("timing", Ty::Bool, "false"),
    ("sigma", Ty::Float, "2"),
    ("size", Ty::Int, "64"),
    ("count", Ty::Int, "8"),
    ("synth_kind", Ty::Str, "blur"),
    ("blur", Ty::Str, "gaussian"),
    ("blur_size", Ty::Int, "5"),
    ("blur_sigma", Ty::Float, "1"),
    ("motion_length", Ty::Float, "5"),
    ("motion_angle", Ty::Float, "0.6"),
    ("missing_rate", Ty::Float, "0.6"),
    ("rain_density", Ty::Float, "0.02"),
    ("kernel_size", Ty::Int, "7"),
    ("kernel_mu", Ty::Float, "0.001"),
    ("blind_levels", Ty::Int, "4"),
    ("blind_rounds", Ty::Int, "10"),
    ("epochs", Ty::Int, "30"),
    ("width", Ty::Int, "8"),
    ("gm_depth", Ty::Int, "7"),
    ("dm_depth", Ty::Int, "4"),
    ("step_size", Ty::OptFloat, ""),
    ("batch_size", Ty::Int, "8"),
    ("patch_size", Ty::Int, "32"),
    ("noise_levels", Ty::FloatList, "1,2,3"),
    ("lipschitz", Ty::OptFloat, ""),
    ("c_budget", Ty::OptFloat, ""),
    ("probes", Ty::Int, "8"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: KEYS.iter().map(|&(k, _, d)| (k, d.to_string())).collect(),
        }
    }
}

fn bad(key: &str, value: &str, what: &str) -> CliError {
    CliError::Input(format!("config key {key}: {value:?} is not {what}"))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Input(format!("config line {}: expected key = value", n + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let &(k, ty, _) = KEYS
            .iter()
            .find(|(k, _, _)| *k == key)
            .ok_or_else(|| CliError::Input(format!("unknown config key {key:?}")))?;
        check(k, ty, value)?;
        self.values.insert(k, value.to_string());
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, arg: &str) -> Result<(), CliError> {
        let (k, v) = arg
            .split_once('=')
            .ok_or_else(|| CliError::Input(format!("override {arg:?} is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    /// The effective configuration with every key, parseable by [`parse`](Self::parse).
    pub fn echo(&self) -> String {
        let mut s = String::from("# effective configuration\n");
        for &(k, _, _) in KEYS {
            s.push_str(&format!("{k} = {}\n", self.values[k]));
        }
        s
    }

    fn raw(&self, key: &str) -> &str {
        &self.values[key]
    }

    pub fn str(&self, key: &str) -> &str {
        self.raw(key)
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let v = self.raw(key);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    pub fn float(&self, key: &str) -> f64 {
        self.raw(key).parse().expect("validated on set")
    }

    pub fn opt_float(&self, key: &str) -> Option<f64> {
        let v = self.raw(key);
        (!v.is_empty()).then(|| v.parse().expect("validated on set"))
    }

    pub fn int(&self, key: &str) -> u64 {
        self.raw(key).parse().expect("validated on set")
    }

    pub fn usize(&self, key: &str) -> usize {
        self.int(key) as usize
    }

    pub fn bool(&self, key: &str) -> bool {
        self.raw(key) == "true"
    }

    pub fn float_list(&self, key: &str) -> Vec<f64> {
        self.raw(key)
            .split(',')
            .map(|s| s.trim().parse().expect("validated on set"))
            .collect()
    }

    pub fn seed(&self) -> u64 {
        self.int("seed")
    }

    pub fn task(&self) -> Result<TaskKind, CliError> {
        Ok(TaskKind::parse(self.str("task"))?)
    }

    pub fn schedule(&self) -> Result<GammaSchedule, CliError> {
        Ok(GammaSchedule::new(self.float("gamma0"), self.float("eta"))?)
    }

    pub fn stop(&self) -> StopRule {
        StopRule {
            max_iters: self.usize("max_iters"),
            residual_tol: self.opt_float("residual_tol"),
            reconstruction_tol: self.opt_float("reconstruction_tol"),
        }
    }

    pub fn init(&self) -> Result<InitChoice, CliError> {
        match self.str("init") {
            "observation" => Ok(InitChoice::Observation),
            "penalized_solve" => Ok(InitChoice::PenalizedSolve),
            other => Err(CliError::Input(format!(
                "init must be observation or penalized_solve, got {other:?}"
            ))),
        }
    }

    /// Blur used when synthesizing degraded data.
    pub fn blur(&self) -> Result<BlurKernel, CliError> {
        let size = self.usize("blur_size");
        Ok(match self.str("blur") {
            "gaussian" => BlurKernel::gaussian(size, self.float("blur_sigma"))?,
            "motion" => BlurKernel::motion(size, self.float("motion_length"), self.float("motion_angle"))?,
            "uniform" => BlurKernel::uniform(size, size)?,
            other => {
                return Err(CliError::Input(format!(
                    "blur must be gaussian, motion or uniform, got {other:?}"
                )))
            }
        })
    }

    pub fn train_config(&self, base: TrainConfig) -> TrainConfig {
        TrainConfig {
            noise_levels: self.float_list("noise_levels"),
            patch_size: self.usize("patch_size"),
            epochs: self.usize("epochs"),
            step_size: self.opt_float("step_size").unwrap_or(base.step_size),
            batch_size: self.usize("batch_size"),
            seed: self.seed(),
            loss: base.loss,
        }
    }
}

fn check(key: &str, ty: Ty, v: &str) -> Result<(), CliError> {
    let float = |s: &str| s.trim().parse::<f64>().ok().filter(|x| x.is_finite());
    match ty {
        Ty::Str => {}
        Ty::Float => {
            float(v).ok_or_else(|| bad(key, v, "a finite number"))?;
        }
        Ty::OptFloat => {
            if !v.is_empty() {
                float(v).ok_or_else(|| bad(key, v, "a finite number"))?;
            }
        }
        Ty::Int => {
            v.parse::<u64>().map_err(|_| bad(key, v, "a non-negative integer"))?;
        }
        Ty::Bool => {
            if v != "true" && v != "false" {
                return Err(bad(key, v, "true or false"));
            }
        }
        Ty::FloatList => {
            if v.split(',').any(|s| float(s).is_none()) {
                return Err(bad(key, v, "a comma-separated list of numbers"));
            }
        }
    }
    Ok(())
}
