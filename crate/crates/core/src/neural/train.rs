//! Greedy, module-by-module training with plain mini-batch SGD.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::{ConvNetModule, ParamGrads, Role};
use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::rng::{SeedStreams, STREAM_NOISE};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    Mse,
    Logistic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Gaussian noise levels in percent of the `[0, 1]` range.
    pub noise_levels: Vec<f64>,
    pub patch_size: usize,
    pub epochs: usize,
    pub step_size: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: Loss,
}

impl TrainConfig {
    pub fn gm_default() -> Self {
        Self {
            noise_levels: vec![1.0, 2.0, 3.0],
            patch_size: 32,
            epochs: 30,
            step_size: 0.05,
            batch_size: 8,
            seed: 0,
            loss: Loss::Mse,
        }
    }

    pub fn dm_default() -> Self {
        Self {
            step_size: 0.5,
            loss: Loss::Logistic,
            ..Self::gm_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::param("training step size must be > 0"));
        }
        if self.noise_levels.is_empty() || self.noise_levels.iter().any(|&s| !(s > 0.0 && s < 100.0)) {
            return Err(Error::param("noise levels must lie in (0, 100) percent"));
        }
        if self.patch_size == 0 || self.batch_size == 0 {
            return Err(Error::param("patch and batch sizes must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Corpus loss before training and after each epoch.
    pub losses: Vec<f64>,
    /// Final classification accuracy on the training pairs (DM only).
    pub accuracy: Option<f64>,
}

struct Sample {
    input: Vec<f64>,
    // GM: regression target; DM: label in {0, 1} stored in target[0]
    target: Vec<f64>,
}

/// Crops one patch per corpus plane and pairs it with a noisy copy. The
/// noise level cycles through `cfg.noise_levels`.
fn build_pairs(corpus: &[ImageGrid], cfg: &TrainConfig) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut rng = SeedStreams::new(cfg.seed).stream(STREAM_NOISE);
    let p = cfg.patch_size;
    let mut pairs = Vec::new();
    for img in corpus {
        if img.height() < p || img.width() < p {
            return Err(Error::dim(format!(
                "corpus image {}×{} smaller than patch size {p}",
                img.height(),
                img.width()
            )));
        }
        for c in 0..img.channels() {
            let i0 = rng.random_range(0..=img.height() - p);
            let j0 = rng.random_range(0..=img.width() - p);
            let plane = img.plane(c);
            let clean: Vec<f64> = (0..p * p)
                .map(|k| plane[(i0 + k / p) * img.width() + j0 + k % p])
                .collect();
            let sigma = cfg.noise_levels[pairs.len() % cfg.noise_levels.len()] / 100.0;
            let normal = Normal::new(0.0, sigma).expect("valid sigma");
            let noisy: Vec<f64> = clean.iter().map(|v| v + normal.sample(&mut rng)).collect();
            pairs.push((clean, noisy));
        }
    }
    Ok(pairs)
}

/// Trains the residual map on `noisy → clean − noisy` with the MSE loss.
pub fn train_gm(m: &ConvNetModule, corpus: &[ImageGrid], cfg: &TrainConfig) -> Result<(ConvNetModule, TrainReport)> {
    if m.role() != Role::Gm {
        return Err(Error::RoleMismatch {
            expected: "GM",
            found: m.role().name(),
        });
    }
    cfg.validate()?;
    if cfg.loss != Loss::Mse {
        return Err(Error::param("generative modules train with the MSE loss"));
    }
    let samples: Vec<Sample> = build_pairs(corpus, cfg)?
        .into_iter()
        .map(|(clean, noisy)| {
            let target = clean.iter().zip(&noisy).map(|(c, n)| c - n).collect();
            Sample { input: noisy, target }
        })
        .collect();
    sgd(m, &samples, cfg)
}

/// Trains a logistic classifier on the score: noisy patches are labelled
/// 1, clean patches 0.
pub fn train_dm(m: &ConvNetModule, corpus: &[ImageGrid], cfg: &TrainConfig) -> Result<(ConvNetModule, TrainReport)> {
    if m.role() != Role::Dm {
        return Err(Error::RoleMismatch {
            expected: "DM",
            found: m.role().name(),
        });
    }
    cfg.validate()?;
    if cfg.loss != Loss::Logistic {
        return Err(Error::param("discriminative modules train with the logistic loss"));
    }
    let mut samples = Vec::new();
    for (clean, noisy) in build_pairs(corpus, cfg)? {
        samples.push(Sample {
            input: clean,
            target: vec![0.0],
        });
        samples.push(Sample {
            input: noisy,
            target: vec![1.0],
        });
    }
    let (trained, mut report) = sgd(m, &samples, cfg)?;
    let p = cfg.patch_size;
    let correct = samples
        .iter()
        .filter(|s| {
            let score = mean(trained.forward_plane(&s.input, p, p).output());
            (score > 0.0) == (s.target[0] == 1.0)
        })
        .count();
    report.accuracy = Some(correct as f64 / samples.len() as f64);
    Ok((trained, report))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

// Loss of one sample and, when requested, its parameter gradient.
fn sample_loss(m: &ConvNetModule, s: &Sample, p: usize, loss: Loss, with_grad: bool) -> (f64, Option<ParamGrads>) {
    let fwd = m.forward_plane(&s.input, p, p);
    let out = fwd.output();
    let n = out.len() as f64;
    let (value, gout) = match loss {
        Loss::Mse => {
            let diff: Vec<f64> = out.iter().zip(&s.target).map(|(a, b)| a - b).collect();
            let value = diff.iter().map(|d| d * d).sum::<f64>() / n;
            (value, diff.into_iter().map(|d| 2.0 * d / n).collect::<Vec<_>>())
        }
        Loss::Logistic => {
            let score = mean(out);
            let y = s.target[0];
            let value = softplus(score) - y * score;
            (value, vec![(sigmoid(score) - y) / n; out.len()])
        }
    };
    let grads = with_grad.then(|| m.backward_plane(&fwd, &gout).0);
    (value, grads)
}

fn corpus_loss(m: &ConvNetModule, samples: &[Sample], p: usize, loss: Loss) -> f64 {
    let losses: Vec<f64> = samples
        .par_iter()
        .map(|s| sample_loss(m, s, p, loss, false).0)
        .collect();
    losses.iter().sum::<f64>() / samples.len() as f64
}

fn sgd(m: &ConvNetModule, samples: &[Sample], cfg: &TrainConfig) -> Result<(ConvNetModule, TrainReport)> {
    let (p, loss) = (cfg.patch_size, cfg.loss);
    let mut model = m.clone();
    let mut losses = vec![corpus_loss(&model, samples, p, loss)];
    let streams = SeedStreams::new(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut streams.indexed("shuffle", epoch as u64));
        for batch in order.chunks(cfg.batch_size) {
            // per-sample gradients in parallel, summed in batch order
            let parts: Vec<ParamGrads> = batch
                .par_iter()
                .map(|&i| sample_loss(&model, &samples[i], p, loss, true).1.expect("gradient"))
                .collect();
            let mut total = parts[0].clone();
            for g in &parts[1..] {
                total.add_assign(g);
            }
            let scale = cfg.step_size / batch.len() as f64;
            for (layer, (gw, gb)) in model.layers.iter_mut().zip(&total.0) {
                layer.weights.iter_mut().zip(gw).for_each(|(w, g)| *w -= scale * g);
                layer.bias.iter_mut().zip(gb).for_each(|(b, g)| *b -= scale * g);
            }
        }
        let l = corpus_loss(&model, samples, p, loss);
        let params_finite = model
            .layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()));
        if !l.is_finite() || !params_finite {
            return Err(Error::TrainingDiverged { epoch, loss: l });
        }
        losses.push(l);
    }
    // training changes the weights, so any normalization state is stale
    if cfg.epochs > 0 {
        model.an = None;
    }
    Ok((model, TrainReport { losses, accuracy: None }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smooth_corpus(n: usize, size: usize, seed: u64) -> Vec<ImageGrid> {
        let mut rng = SeedStreams::new(seed).stream("corpus");
        (0..n)
            .map(|_| {
                let (a, b, c): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
                ImageGrid::from_fn(size, size, |i, j| {
                    let (x, y) = (i as f64 / size as f64, j as f64 / size as f64);
                    0.5 + 0.3 * ((a * 6.0 + 1.0) * x + b * 3.0 * y + c * 6.0).sin()
                })
            })
            .collect()
    }

    fn cfg(epochs: usize, loss: Loss) -> TrainConfig {
        TrainConfig {
            noise_levels: vec![10.0],
            patch_size: 12,
            epochs,
            step_size: if loss == Loss::Mse { 0.05 } else { 0.5 },
            batch_size: 4,
            seed: 3,
            loss,
        }
    }

    #[test]
    fn zero_epochs_returns_module_unchanged() {
        let mut rng = SeedStreams::new(1).stream("init");
        let m = ConvNetModule::generative(3, 4, &mut rng).unwrap();
        let (t, report) = train_gm(&m, &smooth_corpus(4, 12, 1), &cfg(0, Loss::Mse)).unwrap();
        assert_eq!(t, m);
        assert_eq!(report.losses.len(), 1);
    }

    #[test]
    fn gm_loss_decreases_and_training_is_deterministic() {
        let mut rng = SeedStreams::new(2).stream("init");
        let m = ConvNetModule::generative(3, 4, &mut rng).unwrap();
        let corpus = smooth_corpus(8, 16, 2);
        let (a, ra) = train_gm(&m, &corpus, &cfg(5, Loss::Mse)).unwrap();
        let (b, _) = train_gm(&m, &corpus, &cfg(5, Loss::Mse)).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert!(ra.losses.last().unwrap() < &ra.losses[0]);
    }

    #[test]
    fn dm_separates_smooth_from_noisy() {
        let mut rng = SeedStreams::new(4).stream("init");
        let m = ConvNetModule::discriminative(3, 4, &mut rng).unwrap();
        let (_, report) = train_dm(&m, &smooth_corpus(12, 12, 5), &cfg(20, Loss::Logistic)).unwrap();
        assert!(report.accuracy.unwrap() > 0.9, "{report:?}");
    }

    #[test]
    fn bad_inputs() {
        let mut rng = SeedStreams::new(5).stream("init");
        let gm = ConvNetModule::generative(2, 2, &mut rng).unwrap();
        assert!(matches!(
            train_gm(&gm, &[], &cfg(1, Loss::Mse)),
            Err(Error::EmptyCorpus)
        ));
        assert!(train_dm(&gm, &smooth_corpus(1, 12, 1), &cfg(1, Loss::Logistic)).is_err());
        let mut c = cfg(1, Loss::Mse);
        c.step_size = 0.0;
        assert!(train_gm(&gm, &smooth_corpus(1, 12, 1), &c).is_err());
        let mut c = cfg(1, Loss::Mse);
        c.noise_levels = vec![100.0];
        assert!(c.validate().is_err());
    }

    #[test]
    fn divergence_reports_the_epoch() {
        let mut rng = SeedStreams::new(6).stream("init");
        let gm = ConvNetModule::generative(3, 4, &mut rng).unwrap();
        let mut c = cfg(3, Loss::Mse);
        c.step_size = 1e300;
        match train_gm(&gm, &smooth_corpus(4, 12, 1), &c) {
            Err(Error::TrainingDiverged { epoch, .. }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
