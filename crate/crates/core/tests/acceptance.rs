//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use gdc_core::certify::{
    certify_contraction, certify_descent, certify_fixed_point, contraction_interval, ContractionProbe,
};
use gdc_core::grid::conv2d_circular;
use gdc_core::neural::{an_normalize, estimate_lipschitz, spectral_norm, train_dm, train_gm, TrainConfig};
use gdc_core::propagate::{initial_point, run, run_scheme, Cascade, GammaSchedule, Objective, Scheme, StopRule};
use gdc_core::prox::prox_scalar;
use gdc_core::rng::StreamRng;
use gdc_core::tasks::{run_blind_deblur, run_task, synth, TaskKind, TaskSpec};
use gdc_core::{metrics, BlurKernel, ConvNetModule, Exponent, Fidelity, ImageGrid, Role, SeedStreams};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

const SEED: u64 = 17;

// pinned tolerances
const PROX_TOL: f64 = 1e-6;
const PROX_GRID_STEP: f64 = 1e-5;
const SOLVE_REL_TOL: f64 = 1e-8;
const SVD_TOL: f64 = 1e-4;
const AN_DELTA: f64 = 0.9;
const AN_SLACK: f64 = 1e-3;
const GRAD_H: f64 = 1e-5;
const GRAD_REL_TOL: f64 = 1e-3;
const GAIN_DB: f64 = 1.0;
const ABLATION_SLACK_DB: f64 = 0.1;
const KERNEL_ERR: f64 = 0.1;

struct Toy {
    gm: ConvNetModule,
    dm: ConvNetModule,
    seconds: f64,
}

struct Report {
    failed: usize,
}

impl Report {
    fn line(&mut self, n: usize, name: &str, start: Instant, budget_s: f64, pass: bool, detail: String) {
        let secs = start.elapsed().as_secs_f64();
        let ok = pass && secs < budget_s;
        if !ok {
            self.failed += 1;
        }
        println!(
            "criterion {n:>2} {name:<28} {} ({secs:.1}s / {budget_s:.0}s) {detail}",
            if ok { "PASS" } else { "FAIL" }
        );
    }
}

fn toy_modules() -> Toy {
    let start = Instant::now();
    let streams = SeedStreams::new(SEED);
    let corpus: Vec<ImageGrid> = (0..16)
        .map(|i| synth::shapes(64, 64, &mut streams.indexed("corpus", i)))
        .collect();
    let mut rng = streams.stream("init");
    let gm0 = ConvNetModule::generative(7, 8, &mut rng).unwrap();
    let dm0 = ConvNetModule::discriminative(4, 8, &mut rng).unwrap();
    let cg = TrainConfig {
        seed: SEED,
        ..TrainConfig::gm_default()
    };
    let cd = TrainConfig {
        seed: SEED + 1,
        ..TrainConfig::dm_default()
    };
    let (gm, _) = train_gm(&gm0, &corpus, &cg).unwrap();
    let (dm, _) = train_dm(&dm0, &corpus, &cd).unwrap();
    Toy {
        gm,
        dm,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn rand_img(h: usize, w: usize, rng: &mut impl Rng) -> ImageGrid {
    ImageGrid::from_fn(h, w, |_, _| rng.random::<f64>())
}

fn prox_oracle(n: usize, r: &mut Report) {
    let start = Instant::now();
    let mut rng = SeedStreams::new(SEED).stream("c1");
    let ps = [Exponent::Zero, Exponent::PointEight, Exponent::One];
    let mut worst: f64 = f64::NEG_INFINITY;
    for i in 0..1000 {
        let x = rng.random::<f64>() * 2.0 - 1.0;
        let lambda = rng.random::<f64>() * 0.5;
        let p = ps[i % 3];
        let obj = |v: f64| lambda * p.penalty(v) + 0.5 * (v - x) * (v - x);
        // the minimizer lies between 0 and x
        let (lo, hi) = (x.min(0.0), x.max(0.0));
        let steps = ((hi - lo) / PROX_GRID_STEP).ceil() as usize;
        let mut best = obj(0.0).min(obj(x));
        for s in 0..=steps {
            best = best.min(obj((lo + s as f64 * PROX_GRID_STEP).min(hi)));
        }
        worst = worst.max(obj(prox_scalar(x, lambda, p)) - best);
    }
    r.line(
        n,
        "prox oracle",
        start,
        5.0,
        worst <= PROX_TOL,
        format!("max excess {worst:.2e}"),
    );
}

fn dense_conv(k: &BlurKernel, h: usize, w: usize) -> DMatrix<f64> {
    let (ch, cw) = ((k.height() / 2) as isize, (k.width() / 2) as isize);
    let mut a = DMatrix::zeros(h * w, h * w);
    for r in 0..h {
        for c in 0..w {
            for i in 0..k.height() {
                for j in 0..k.width() {
                    let sr = (r as isize - (i as isize - ch)).rem_euclid(h as isize) as usize;
                    let sc = (c as isize - (j as isize - cw)).rem_euclid(w as isize) as usize;
                    a[(r * w + c, sr * w + sc)] += k.weight(i, j);
                }
            }
        }
    }
    a
}

fn fft_solver(n: usize, r: &mut Report) {
    let start = Instant::now();
    let mut rng = SeedStreams::new(SEED).stream("c2");
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let size = [3, 5][rng.random_range(0..2)];
        let raw: Vec<f64> = (0..size * size).map(|_| rng.random::<f64>() + 0.05).collect();
        let k = BlurKernel::normalized(size, size, raw).unwrap();
        let y = rand_img(8, 8, &mut rng);
        let ud = rand_img(8, 8, &mut rng);
        let gamma = 0.1 + rng.random::<f64>() * 5.0;
        let fid = Fidelity::deconv(y.clone(), k.clone()).unwrap();
        let got = fid.penalized_solve(&ud, gamma).unwrap();
        let a = dense_conv(&k, 8, 8);
        let lhs = a.transpose() * &a * 2.0 + DMatrix::identity(64, 64) * gamma;
        let rhs =
            a.transpose() * DVector::from_column_slice(y.data()) * 2.0 + DVector::from_column_slice(ud.data()) * gamma;
        let want = lhs.lu().solve(&rhs).unwrap();
        let err = (DVector::from_column_slice(got.data()) - &want).norm() / want.norm();
        worst = worst.max(err);
    }
    r.line(
        n,
        "fft solver",
        start,
        5.0,
        worst <= SOLVE_REL_TOL,
        format!("max rel err {worst:.2e}"),
    );
}

fn spectral(n: usize, r: &mut Report) {
    let start = Instant::now();
    let mut rng = SeedStreams::new(SEED).stream("c3");
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let a: Vec<f64> = (0..256).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let svd = DMatrix::from_row_slice(16, 16, &a).singular_values().max();
        let mut z = Vec::new();
        worst = worst.max((spectral_norm(&a, 16, 16, &mut z) - svd).abs());
    }
    let mut init = SeedStreams::new(SEED).stream("init");
    let gm = ConvNetModule::generative(7, 8, &mut init).unwrap();
    let normed = an_normalize(&gm, AN_DELTA).unwrap();
    let est = estimate_lipschitz(&normed, 1000, SEED).unwrap();
    let hist = est.histogram(5);
    r.line(
        n,
        "spectral estimator",
        start,
        30.0,
        worst <= SVD_TOL && est.max_ratio <= AN_DELTA + AN_SLACK,
        format!(
            "max svd err {worst:.2e}, AN max ratio {:.4}, histogram {hist:?}",
            est.max_ratio
        ),
    )
}

fn deconv_instance(seed: u64, size: usize, sigma: f64, k: &BlurKernel) -> (ImageGrid, ImageGrid) {
    let streams = SeedStreams::new(seed);
    let gt = synth::shapes(size, size, &mut streams.stream("gt"));
    let y = synth::add_noise(&conv2d_circular(&gt, k).unwrap(), sigma, &mut streams.stream("noise")).unwrap();
    (gt, y)
}

fn adversarial(role: Role, rng: &mut StreamRng) -> ConvNetModule {
    let mut m = match role {
        Role::Gm => ConvNetModule::generative(3, 8, rng).unwrap(),
        Role::Dm => ConvNetModule::discriminative(3, 8, rng).unwrap(),
    };
    for l in m.layers_mut() {
        l.weights.iter_mut().for_each(|w| *w *= 4.0);
        l.bias.iter_mut().for_each(|b| *b = rng.random::<f64>() - 0.5);
    }
    m
}

fn descent(n: usize, r: &mut Report, toy: &Toy) {
    let start = Instant::now();
    let k = BlurKernel::gaussian(5, 1.0).unwrap();
    let (_, y) = deconv_instance(SEED, 64, 2.0, &k);
    let mut rng = SeedStreams::new(SEED).stream("c4");
    let adv_g = adversarial(Role::Gm, &mut rng);
    let adv_d = adversarial(Role::Dm, &mut rng);
    let mut spec = TaskSpec::new(TaskKind::Deconvolution, y);
    spec.kernel = Some(k);
    let obj = spec.objective().unwrap();
    let u0 = initial_point(&obj, spec.init).unwrap();
    let variants = [
        ("zero", Cascade::empty()),
        ("toy", Cascade::new(&toy.gm, &toy.dm)),
        ("adversarial", Cascade::new(&adv_g, &adv_d).with_alpha(5.0)),
    ];
    let mut pass = true;
    let mut detail = Vec::new();
    for (name, cascade) in variants {
        match run(&obj, &u0, &cascade, &StopRule::iters(50)) {
            Ok((_, trace)) => {
                let cert = certify_descent(&trace, obj.lipschitz()).unwrap();
                pass &= cert.passed() && trace.len() == 50;
                detail.push(format!(
                    "{name}: {} accept {:.2}",
                    cert.verdict.as_str(),
                    trace.accept_rate()
                ));
            }
            Err(e) => {
                pass = false;
                detail.push(format!("{name}: aborted {e}"));
            }
        }
    }
    r.line(n, "sufficient descent", start, 60.0, pass, detail.join(", "));
}

fn fixed_point(n: usize, r: &mut Report, toy: &Toy) {
    let start = Instant::now();
    let streams = SeedStreams::new(SEED);
    let gt = synth::shapes(64, 64, &mut streams.stream("gt"));
    let y = synth::add_rain(&gt, 0.02, &mut streams.stream("rain")).unwrap();
    let mut spec = TaskSpec::new(TaskKind::RainPdm, y);
    spec.schedule = GammaSchedule::new(1.0, 1.5).unwrap();
    spec.stop = StopRule::iters(40);
    spec.gm = Some(toy.gm.clone());
    spec.dm = Some(toy.dm.clone());
    let obj = spec.objective().unwrap();
    let (detail, pass) = match run(&obj, &spec.y, &spec.cascade(), &spec.stop) {
        Ok((_, trace)) => {
            let cert = certify_fixed_point(&trace, obj.l_scale * obj.lipschitz(), None).unwrap();
            let head = cert.get("head_sum").unwrap();
            let tail = cert.get("tail_sum").unwrap();
            (
                format!(
                    "c {:.3e}, head {head:.3e}, tail {tail:.3e}, accept {:.2}, violations {}",
                    cert.get("c").unwrap(),
                    trace.accept_rate(),
                    cert.witnesses.len()
                ),
                cert.passed() && trace.len() == 40 && tail < head,
            )
        }
        Err(e) => (format!("aborted: {e}"), false),
    };
    r.line(n, "fixed-point bound", start, 30.0, pass, detail);
}

fn contraction(n: usize, r: &mut Report) {
    let start = Instant::now();
    let mut w = vec![0.0; 9];
    w[4] = 0.8;
    for i in [1, 3, 5, 7] {
        w[i] = 0.05;
    }
    let k = BlurKernel::new(3, 3, w).unwrap();
    let (_, y) = deconv_instance(SEED, 32, 1.0, &k);
    let fid = Fidelity::deconv(y.clone(), k).unwrap();
    let (rho, l) = (fid.strong_convexity(), fid.lipschitz());

    let mut init = SeedStreams::new(SEED).stream("c6");
    let gm = an_normalize(&ConvNetModule::generative(3, 8, &mut init).unwrap(), 0.2).unwrap();
    let dm = an_normalize(&ConvNetModule::discriminative(3, 8, &mut init).unwrap(), 0.5).unwrap();
    let alpha = 0.1;
    let delta_g = estimate_lipschitz(&gm, 200, SEED).unwrap().max_ratio;
    let delta_d = alpha * estimate_lipschitz(&dm, 200, SEED + 1).unwrap().max_ratio;
    let obj = Objective::pdm(fid.clone(), GammaSchedule::default());
    let probe = ContractionProbe {
        objective: &obj,
        u0: &y,
        cascade: Cascade::new(&gm, &dm).with_alpha(alpha),
        steps: 30,
    };
    let held = contraction_interval(rho, l, delta_g, delta_d).is_some();
    let ok = certify_contraction(&fid, delta_g, delta_d, None, Some(probe)).unwrap();

    // violate the product condition with a strong residual module
    let mut loud = gm.clone();
    for layer in loud.layers_mut() {
        layer.weights.iter_mut().for_each(|v| *v *= 3.0);
    }
    let loud_dg = estimate_lipschitz(&loud, 200, SEED).unwrap().max_ratio;
    let bad = certify_contraction(&fid, loud_dg, delta_d, None, None).unwrap();
    r.line(
        n,
        "contraction",
        start,
        60.0,
        held && ok.passed() && !bad.passed() && bad.get("product").unwrap() >= bad.get("product_bound").unwrap(),
        format!(
            "rho {rho:.3} L {l:.3} dg {delta_g:.3} dd {delta_d:.3} predicted {:.4} max ratio {:.4}; violated dg {loud_dg:.2} -> {}",
            ok.get("delta").unwrap_or(f64::NAN),
            ok.get("max_ratio").unwrap_or(f64::NAN),
            bad.verdict.as_str()
        ),
    );
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn gradients(n: usize, r: &mut Report) {
    let start = Instant::now();
    let mut rng = SeedStreams::new(SEED).stream("c7");
    let (h, w) = (8, 8);
    let gm = ConvNetModule::generative(4, 4, &mut rng).unwrap();
    let dm = ConvNetModule::discriminative(3, 4, &mut rng).unwrap();
    let x: Vec<f64> = (0..h * w).map(|_| rng.random::<f64>()).collect();
    let probe: Vec<f64> = (0..h * w).map(|_| rng.random::<f64>() - 0.5).collect();
    let mut worst: f64 = 0.0;
    for m in [&gm, &dm] {
        // scalar loss: <probe, G(x)> for the GM, the mean score for the DM
        let seed = match m.role() {
            Role::Gm => probe.clone(),
            Role::Dm => vec![1.0 / (h * w) as f64; h * w],
        };
        let loss = |m: &ConvNetModule, x: &[f64]| -> f64 {
            m.forward_plane(x, h, w)
                .output()
                .iter()
                .zip(&seed)
                .map(|(a, b)| a * b)
                .sum()
        };
        let fwd = m.forward_plane(&x, h, w);
        let (pg, xg) = m.backward_plane(&fwd, &seed);
        let flat = pg.flat();
        for _ in 0..20 {
            let i = rng.random_range(0..m.param_count());
            let (mut mp, mut mm) = (m.clone(), m.clone());
            *mp.param_mut(i) += GRAD_H;
            *mm.param_mut(i) -= GRAD_H;
            let fd = (loss(&mp, &x) - loss(&mm, &x)) / (2.0 * GRAD_H);
            worst = worst.max(rel_err(flat[i], fd));

            let j = rng.random_range(0..h * w);
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[j] += GRAD_H;
            xm[j] -= GRAD_H;
            let fd = (loss(m, &xp) - loss(m, &xm)) / (2.0 * GRAD_H);
            worst = worst.max(rel_err(xg[j], fd));
        }
    }
    r.line(
        n,
        "gradient checks",
        start,
        30.0,
        worst <= GRAD_REL_TOL,
        format!("max rel err {worst:.2e}"),
    );
}

fn suite(sigma: f64) -> (BlurKernel, Vec<(ImageGrid, ImageGrid)>) {
    let k = BlurKernel::gaussian(5, 1.0).unwrap();
    let items = (0..20)
        .map(|i| deconv_instance(SEED * 1000 + i, 64, sigma, &k))
        .collect();
    (k, items)
}

fn functional_gain(n: usize, r: &mut Report, toy: &Toy) {
    let start = Instant::now();
    let (k, items) = suite(2.0);
    let (mut pin, mut pout) = (0.0, 0.0);
    let mut certified = true;
    for (gt, y) in items {
        let mut spec = TaskSpec::new(TaskKind::Deconvolution, y);
        spec.kernel = Some(k.clone());
        spec.ground_truth = Some(gt);
        spec.gm = Some(toy.gm.clone());
        spec.dm = Some(toy.dm.clone());
        let out = run_task(&spec).unwrap();
        let m = out.metrics.unwrap();
        pin += m.psnr_input / 20.0;
        pout += m.psnr / 20.0;
        certified &= out.certified();
    }
    let secs = start.elapsed().as_secs_f64() + toy.seconds;
    let budget = 300.0 - toy.seconds;
    r.line(
        n,
        "functional gain",
        start,
        budget,
        pout >= pin + GAIN_DB && certified,
        format!(
            "psnr {pin:.2} -> {pout:.2} dB (gain {:.2}), {secs:.1}s incl. training",
            pout - pin
        ),
    );
}

fn ablation(n: usize, r: &mut Report, toy: &Toy) {
    let start = Instant::now();
    let (k, items) = suite(3.0);
    let schemes = [Scheme::G, Scheme::Gc, Scheme::Gdc];
    let mut means = [0.0; 3];
    for (gt, y) in items {
        let mut spec = TaskSpec::new(TaskKind::Deconvolution, y);
        spec.kernel = Some(k.clone());
        let obj = spec.objective().unwrap();
        let u0 = initial_point(&obj, spec.init).unwrap();
        for (s, mean) in schemes.iter().zip(&mut means) {
            let u = run_scheme(&obj, &u0, &toy.gm, &toy.dm, spec.alpha_d, *s, 50).unwrap();
            *mean += metrics::psnr(&u, &gt).unwrap() / 20.0;
        }
    }
    let [g, gc, gdc] = means;
    r.line(
        n,
        "ablation ordering",
        start,
        300.0,
        gdc >= g - ABLATION_SLACK_DB && gc >= g - ABLATION_SLACK_DB,
        format!("G {g:.2}, GC {gc:.2}, GDC {gdc:.2} dB"),
    );
}

fn blind(n: usize, r: &mut Report, toy: &Toy) {
    let start = Instant::now();
    let streams = SeedStreams::new(SEED);
    let mut rng = streams.stream("c10");
    let k = BlurKernel::motion(7, 5.0, rng.random::<f64>() * std::f64::consts::PI).unwrap();
    let gt = synth::shapes(96, 96, &mut streams.stream("gt"));
    let y = synth::add_noise(&conv2d_circular(&gt, &k).unwrap(), 0.5, &mut streams.stream("noise")).unwrap();
    let mut spec = TaskSpec::new(TaskKind::BlindDeblur, y);
    spec.ground_truth = Some(gt);
    spec.gm = Some(toy.gm.clone());
    spec.dm = Some(toy.dm.clone());
    let (pass, detail) = match run_blind_deblur(&spec) {
        Ok(out) => {
            let est = out.outcome.kernel.clone().unwrap();
            let err = est.l2_distance(&k);
            let sum: f64 = est.weights().iter().sum();
            let simplex = (sum - 1.0).abs() <= 1e-12 && est.weights().iter().all(|&v| v >= 0.0);
            let certs = out.outcome.certificates.iter().filter(|c| c.passed()).count();
            let total = out.outcome.certificates.len();
            let m = out.outcome.metrics.unwrap();
            (
                err < KERNEL_ERR && simplex && certs == total && total > 0,
                format!(
                    "kernel err {err:.4}, sum {sum:.15}, certificates {certs}/{total}, psnr {:.2} -> {:.2} dB",
                    m.psnr_input, m.psnr
                ),
            )
        }
        Err(e) => (false, format!("failed: {e}")),
    };
    r.line(n, "blind deblurring", start, 180.0, pass, detail);
}

fn main() -> ExitCode {
    let mut r = Report { failed: 0 };
    prox_oracle(1, &mut r);
    fft_solver(2, &mut r);
    spectral(3, &mut r);
    let toy = toy_modules();
    println!("toy modules trained in {:.1}s", toy.seconds);
    descent(4, &mut r, &toy);
    fixed_point(5, &mut r, &toy);
    contraction(6, &mut r);
    gradients(7, &mut r);
    functional_gain(8, &mut r, &toy);
    ablation(9, &mut r, &toy);
    blind(10, &mut r, &toy);
    println!("{} of 10 criteria passed", 10 - r.failed);
    if r.failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
