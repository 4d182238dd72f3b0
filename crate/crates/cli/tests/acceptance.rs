//! Acceptance suite: one pass/fail line per criterion.
//!
//! `ADROP_CRITERIA=1,7` runs a subset. Exits nonzero if any selected
//! criterion fails.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use adrop_core::dataset::{synthetic_set, PairDataset, TrainDegradation};
use adrop_core::degrade::{bicubic_resize, cubic, gaussian_blur, jpeg_like, ComboName};
use adrop_core::diagnostics::{channel_ablation, degraded_pairs, evaluate, feature_statistics, FeatureScope, Stage};
use adrop_core::dropout::{adaptive_dropout, DropWeight, DropoutConfig, DropoutMask, DropoutVariant, Mode, WeightFormatPolicy};
use adrop_core::gradcheck::{self, check_op, GradReport, DEFAULT_STEP};
use adrop_core::model::{ModelConfig, SRNet};
use adrop_core::seed::derive_seed;
use adrop_core::tensor::{MixWeight, Tape, Tensor, Var};
use adrop_core::train::{cosine_lr, AnnealSchedule, TrainConfig, Trainer};
use adrop_core::variance::{variance_shift_monte_carlo, SampleShape};
use proptest::prelude::*;
use proptest::test_runner::{Config as ProptestConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn adrop(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_adrop")).args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("adrop {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-9)
}

// 1 -------------------------------------------------------------------------

fn variance_shift_grid() -> Outcome {
    let start = Instant::now();
    let csv = adrop(&["verify", "--grid", "--n", "1000000", "--seed", "0"])?;
    let elapsed = start.elapsed();
    let mut lines = csv.lines();
    ensure(lines.next() == Some("mu,sigma2,p,w,s_closed,s_mc,n,rel_err"), || "bad CSV header".into())?;
    let (mut worst, mut cells, mut reference) = (0.0f64, 0, None);
    for line in lines {
        let f: Vec<f64> = line.split(',').map(|v| v.parse().map_err(|_| format!("bad field in `{line}`"))).collect::<Result<_, _>>()?;
        ensure(f[6] == 1e6, || format!("n = {} in `{line}`", f[6]))?;
        let err = rel(f[5], f[4]);
        ensure(err < 0.03, || format!("cell ({}, {}, {}, {}): s_mc {} vs s_closed {}", f[0], f[1], f[2], f[3], f[5], f[4]))?;
        worst = worst.max(err);
        cells += 1;
        if (f[0], f[1], f[2], f[3]) == (1.0, 1.0, 0.5, 0.0) {
            reference = Some(f[4]);
        }
    }
    ensure(cells == 36, || format!("{cells} grid cells"))?;
    ensure(reference == Some(2.0), || format!("reference cell s_closed = {reference:?}"))?;
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:.1?}"))?;
    Ok(format!("36 cells, max rel err {worst:.4}, reference s = 2, {elapsed:.1?}"))
}

// 2 -------------------------------------------------------------------------

fn quadratic_damping() -> Outcome {
    let mc = |w: f64, stream: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(2, &[stream]));
        variance_shift_monte_carlo(1.0, 1.0, 0.5, w, 1_000_000, SampleShape::default(), &mut rng).map(|r| r.s_mc)
    };
    let (s0, s5) = (mc(0.0, 0).map_err(|e| e.to_string())?, mc(0.5, 1).map_err(|e| e.to_string())?);
    let ratio = s5 / s0;
    ensure((0.2375..=0.2625).contains(&ratio), || format!("ratio {ratio:.5} (s0 {s0:.5}, s0.5 {s5:.5})"))?;
    Ok(format!("s(0.5)/s(0) = {ratio:.5}"))
}

// 3 -------------------------------------------------------------------------

fn eval_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..100 {
        let variant = DropoutVariant::ALL[rng.random_range(0..DropoutVariant::ALL.len())];
        let p = rng.random_range(0.0..0.95);
        let w_init = rng.random_range(0.0..=1.0);
        let (n, c, h, wd) = (rng.random_range(1..4), rng.random_range(1..9), rng.random_range(1..6), rng.random_range(1..6));
        let x = Tensor::<f32>::from_fn([n, c, h, wd], |_| rng.random_range(-3.0..3.0));
        let mut tape = Tape::<f32>::new();
        let xv = tape.constant(x.clone());
        let weight = match variant {
            DropoutVariant::None => DropWeight::Scalar(1.0),
            DropoutVariant::Standard => DropWeight::Scalar(0.0),
            DropoutVariant::AdaptiveFixed => DropWeight::Scalar(w_init),
            DropoutVariant::ExplicitAnnealed => DropWeight::Scalar(if rng.random_bool(0.5) { w_init } else { 1.0 }),
            DropoutVariant::ImplicitLearned => {
                let cols = if rng.random_bool(0.5) { 1 } else { c };
                DropWeight::Tensor(tape.constant(Tensor::from_fn([n, cols], |_| rng.random::<f32>())))
            }
        };
        let mut mask_rng = ChaCha8Rng::seed_from_u64(case);
        let (y, mask) = adaptive_dropout(&mut tape, xv, weight, p, &mut mask_rng, Mode::Eval).map_err(|e| e.to_string())?;
        let same = tape.value(y).data().iter().zip(x.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        ensure(same && mask.is_none(), || format!("case {case}: {variant} p={p:.3} not the identity"))?;
    }
    Ok("100 configs bitwise identical".into())
}

// 4 -------------------------------------------------------------------------

const GRAD_TOL: f64 = 1e-4;
const GRAD_INSTANCES: u64 = 10;

fn op_case(
    name: &str,
    shapes: &[&[usize]],
    f: impl Fn(&mut Tape<f64>, &[Var]) -> adrop_core::Result<Var>,
) -> Result<f64, String> {
    let mut worst = 0.0f64;
    for seed in 0..GRAD_INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs: Vec<Tensor<f64>> =
            shapes.iter().map(|s| Tensor::from_fn(s.to_vec(), |_| rng.random_range(-1.0..1.0))).collect();
        let report = check_op(&inputs, DEFAULT_STEP, |t, v| {
            let y = f(t, v)?;
            let mut trng = ChaCha8Rng::seed_from_u64(500 + seed);
            let target = Tensor::from_fn(t.value(y).shape().to_vec(), |_| trng.random_range(-1.0..1.0));
            let tv = t.constant(target);
            t.l1_loss(y, tv)
        })
        .map_err(|e| format!("{name}: {e}"))?;
        ensure(report.checked > 0, || format!("{name} #{seed}: nothing checked"))?;
        ensure(report.max_rel_error() < GRAD_TOL, || format!("{name} #{seed}: rel err {:e}", report.max_rel_error()))?;
        worst = worst.max(report.max_rel_error());
    }
    Ok(worst)
}

fn gradient_suite() -> Outcome {
    let factors = vec![0.0, 2.0, 2.0, 0.0, 2.0, 0.0];
    let mask = DropoutMask::from_keep(vec![true, false, true, true, false, false], 0.5).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    let mut ops = 0;
    let mut track = |r: Result<f64, String>| -> Result<(), String> {
        worst = worst.max(r?);
        ops += 1;
        Ok(())
    };
    track(op_case("conv2d", &[&[2, 3, 5, 4], &[4, 3, 3, 3], &[4]], |t, v| t.conv2d(v[0], v[1], v[2], 1)))?;
    track(op_case("conv2d 1x1", &[&[2, 3, 3, 3], &[2, 3, 1, 1], &[2]], |t, v| t.conv2d(v[0], v[1], v[2], 0)))?;
    track(op_case("linear", &[&[3, 5], &[4, 5], &[4]], |t, v| t.linear(v[0], v[1], v[2])))?;
    track(op_case("relu", &[&[2, 3, 4, 4]], |t, v| Ok(t.relu(v[0]))))?;
    track(op_case("leaky_relu", &[&[2, 3, 4, 4]], |t, v| Ok(t.leaky_relu(v[0], 0.2))))?;
    track(op_case("sigmoid", &[&[3, 7]], |t, v| Ok(t.sigmoid(v[0]))))?;
    track(op_case("global_avg_pool", &[&[2, 3, 4, 5]], |t, v| t.global_avg_pool(v[0])))?;
    track(op_case("pixel_shuffle", &[&[2, 8, 3, 2]], |t, v| t.pixel_shuffle(v[0], 2)))?;
    track(op_case("add", &[&[2, 3, 2, 2], &[2, 3, 2, 2]], |t, v| t.add(v[0], v[1])))?;
    track(op_case("sum", &[&[2, 3, 2]], |t, v| Ok(t.sum(v[0]))))?;
    track(op_case("l1_loss", &[&[2, 3, 2, 2], &[2, 3, 2, 2]], |t, v| t.l1_loss(v[0], v[1])))?;
    track(op_case("channel_scale", &[&[2, 3, 3, 3]], |t, v| t.channel_scale(v[0], factors.clone())))?;
    track(op_case("adaptive_mix const", &[&[2, 3, 3, 3]], |t, v| {
        t.adaptive_mix(v[0], MixWeight::Const(0.3), factors.clone())
    }))?;
    // Tensor weights: sigmoid keeps them inside (0, 1) under perturbation.
    track(op_case("adaptive_mix value", &[&[2, 3, 3, 2], &[2, 1]], |t, v| {
        let w = t.sigmoid(v[1]);
        adrop_core::dropout::adaptive_dropout_with_mask(t, v[0], DropWeight::Tensor(w), &mask)
    }))?;
    track(op_case("adaptive_mix vector", &[&[2, 3, 3, 2], &[2, 3]], |t, v| {
        let w = t.sigmoid(v[1]);
        adrop_core::dropout::adaptive_dropout_with_mask(t, v[0], DropWeight::Tensor(w), &mask)
    }))?;

    let variants = [
        (DropoutVariant::Standard, WeightFormatPolicy::Split),
        (DropoutVariant::ExplicitAnnealed, WeightFormatPolicy::Split),
        (DropoutVariant::ImplicitLearned, WeightFormatPolicy::Split),
        (DropoutVariant::ImplicitLearned, WeightFormatPolicy::Vector),
    ];
    for (variant, w_format) in variants {
        for seed in 0..GRAD_INSTANCES {
            let cfg = ModelConfig {
                num_blocks: 2,
                channels: 8,
                dropout: DropoutConfig { variant, w_format, ..DropoutConfig::default() },
                ..ModelConfig::default()
            };
            let mut model = SRNet::<f64>::build(cfg, seed).map_err(|e| e.to_string())?;
            model.randomize_residual_convs(seed + 100);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 200);
            let x = Tensor::from_fn([2, 3, 4, 4], |_| rng.random_range(0.0..1.0));
            let y = Tensor::from_fn([2, 3, 8, 8], |_| rng.random_range(0.0..1.0));
            let report: GradReport = gradcheck::check_model(&model, &x, &y, DEFAULT_STEP).map_err(|e| e.to_string())?;
            ensure(report.max_rel_error() < GRAD_TOL, || {
                format!("model {variant}/{} seed {seed}: rel err {:e}", w_format.as_str(), report.max_rel_error())
            })?;
            worst = worst.max(report.max_rel_error());
        }
    }
    Ok(format!("{ops} ops and 4 model variants x {GRAD_INSTANCES} instances, max rel err {worst:.2e}"))
}

// 5 -------------------------------------------------------------------------

fn annealing_schedule() -> Outcome {
    let mut runner = TestRunner::new(ProptestConfig { cases: 2000, failure_persistence: None, ..ProptestConfig::default() });
    let strategy = (1usize..=16, 0usize..=10_000, 0.0f64..=1.0, 0usize..200_000);
    runner
        .run(&strategy, |(blocks, t, w_init, iter)| {
            let s = AnnealSchedule { num_blocks: blocks, interval: t, w_init };
            let (w, next) = (s.weights(iter), s.weights(iter + 1));
            for k in 0..blocks {
                prop_assert_eq!(w[k] == 1.0, iter >= (k + 1) * t);
                prop_assert!(next[k] >= w[k]);
                if k > 0 {
                    prop_assert!(w[k - 1] >= w[k]);
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("2000 random schedules".into())
}

// 6 -------------------------------------------------------------------------

fn cosine_schedule() -> Outcome {
    let cfg = TrainConfig::default();
    let t = cfg.total_iters;
    let (a, b, c) = (cfg.lr(0), cfg.lr(t / 2), cfg.lr(t));
    ensure(a == 2e-4, || format!("lr(0) = {a:e}"))?;
    ensure((b - 1e-4).abs() <= 1e-12, || format!("lr(T/2) = {b:e}"))?;
    ensure(c.abs() <= 1e-12, || format!("lr(T) = {c:e}"))?;
    ensure(cosine_lr(t / 2, t, 2e-4) == b, || "schedule dispatch differs from cosine_lr".into())?;
    Ok(format!("lr(0) = {a:e}, lr(T/2) = {b:e}, lr(T) = {c:e}"))
}

// 7 -------------------------------------------------------------------------

/// LR patch side and initial learning rate for the toy reproduction; see
/// the decisions ledger for why they differ from the training defaults.
const TOY_PATCH: usize = 16;
const TOY_LR0: f64 = 3e-3;

fn toy_run(variant: DropoutVariant, seed: u64, data: &PairDataset, test: &[adrop_core::dataset::NamedImage]) -> adrop_core::Result<f64> {
    let mc = ModelConfig { dropout: DropoutConfig { variant, ..DropoutConfig::default() }, ..ModelConfig::default() };
    let cfg = TrainConfig { total_iters: 2000, batch_size: 8, patch_size: TOY_PATCH, lr0: TOY_LR0, seed, ..TrainConfig::default() };
    let mut trainer = Trainer::new(SRNet::build(mc, seed)?, cfg)?;
    trainer.run(data)?;
    let rec = evaluate(&mut trainer.model, "synthetic", test, &[ComboName::Noise], 0)?;
    Ok(rec[0].psnr_db)
}

fn directional_reproduction() -> Outcome {
    let start = Instant::now();
    let train_imgs = synthetic_set(24, 64, 64, derive_seed(7, &[1]));
    let test_imgs = synthetic_set(10, 64, 64, derive_seed(7, &[2]));
    let deg = TrainDegradation::Combos(vec![ComboName::Clean, ComboName::Blur]);
    let data = PairDataset::from_images(&train_imgs, 2, TOY_PATCH, 8, &deg, derive_seed(7, &[0xda7a])).map_err(|e| e.to_string())?;
    let variants = [DropoutVariant::None, DropoutVariant::Standard, DropoutVariant::ExplicitAnnealed];
    let jobs: Vec<(usize, u64)> = (0..3).flat_map(|v| (0..3u64).map(move |s| (v, s))).collect();
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(jobs.len());

    let mut scores = vec![[0.0f64; 3]; 3];
    std::thread::scope(|scope| -> Result<(), String> {
        let handles: Vec<_> = (0..threads)
            .map(|worker| {
                let (jobs, data, test) = (&jobs, &data, &test_imgs);
                scope.spawn(move || {
                    jobs.iter()
                        .skip(worker)
                        .step_by(threads)
                        .map(|&(v, s)| toy_run(variants[v], s, data, test).map(|p| (v, s, p)))
                        .collect::<adrop_core::Result<Vec<_>>>()
                })
            })
            .collect();
        for h in handles {
            for (v, s, p) in h.join().map_err(|_| "worker panicked".to_string())?.map_err(|e| e.to_string())? {
                scores[v][s as usize] = p;
            }
        }
        Ok(())
    })?;

    let mean = |v: usize| scores[v].iter().sum::<f64>() / 3.0;
    let (none, standard, explicit) = (mean(0), mean(1), mean(2));
    let elapsed = start.elapsed();
    let summary = format!(
        "unseen noise PSNR: none {none:.3}, standard {standard:.3}, explicit {explicit:.3} dB; {elapsed:.0?} on {threads} thread(s)"
    );
    let a = standard <= none;
    let b = explicit - standard >= 0.0;
    ensure(a && b, || format!("(a) standard <= none: {a}; (b) explicit >= standard: {b}; {summary}"))?;
    ensure(elapsed < Duration::from_secs(20 * 60), || format!("too slow; {summary}"))?;
    Ok(summary)
}

// 8 -------------------------------------------------------------------------

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let files = ["loss.csv", "w_trace.csv", "model.ckpt"];
    for variant in ["explicit", "implicit"] {
        let run = |name: &str| -> Result<Vec<Vec<u8>>, String> {
            let out = dir.path().join(format!("{variant}_{name}"));
            let v = format!("variant={variant}");
            adrop(&[
                "train", "--synthetic", "4", "--synthetic-size", "64", "--seed", "8", "--out", out.to_str().unwrap(),
                "--set", &v, "--set", "total_iters=60", "--set", "batch_size=4", "--set", "patch_size=16",
                "--set", "w_log_every=10",
            ])?;
            files.iter().map(|f| fs::read(out.join(f)).map_err(|e| e.to_string())).collect()
        };
        let (a, b) = (run("a")?, run("b")?);
        for (i, f) in files.iter().enumerate() {
            ensure(a[i] == b[i], || format!("{variant}: {f} differs"))?;
        }
    }
    Ok("explicit and implicit runs: loss.csv, w_trace.csv, model.ckpt bitwise equal".into())
}

// 9 and 10 ------------------------------------------------------------------

fn trained_toy_model() -> adrop_core::Result<SRNet<f32>> {
    let imgs = synthetic_set(8, 48, 48, 91);
    let data = PairDataset::from_images(&imgs, 2, TOY_PATCH, 4, &TrainDegradation::default(), 92)?;
    let cfg = TrainConfig { total_iters: 300, batch_size: 8, patch_size: TOY_PATCH, lr0: TOY_LR0, seed: 9, ..TrainConfig::default() };
    let mut trainer = Trainer::new(SRNet::build(ModelConfig::default(), 9)?, cfg)?;
    trainer.run(&data)?;
    Ok(trainer.model)
}

fn ablation_energy() -> Outcome {
    let mut model = trained_toy_model().map_err(|e| e.to_string())?;
    let pairs = degraded_pairs(&synthetic_set(4, 32, 32, 93), ComboName::Clean, 2, 0).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for block in 0..model.config().num_blocks {
        let curve = channel_ablation(&mut model, block, &pairs).map_err(|e| e.to_string())?;
        for e in &curve.entries {
            ensure(!e.flagged(), || format!("block {block} channel {}: zero energy after masking", e.channel))?;
            ensure(e.energy_rel_err < 1e-5, || format!("block {block} channel {}: {:e}", e.channel, e.energy_rel_err))?;
            worst = worst.max(e.energy_rel_err);
        }
    }
    Ok(format!("4 blocks x 16 channels, max rel energy err {worst:.2e}"))
}

fn feature_drift() -> Outcome {
    let trained = trained_toy_model().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let input = Tensor::from_fn([1, 3, 16, 16], |_| rng.random::<f32>());
    let gap = |w: f64| -> Result<f64, String> {
        let mut m = trained.clone();
        m.set_block_weights(&[w; 4]).map_err(|e| e.to_string())?;
        let stats = feature_statistics(&mut m, &input, 10_000, FeatureScope::Block(1)).map_err(|e| e.to_string())?;
        Ok(stats.get(1, Stage::Pre).expect("block 1 row").gap())
    };
    let (standard, adaptive) = (gap(0.0)?, gap(0.7)?);
    let ratio = adaptive / standard;
    ensure(standard > adaptive, || format!("gap standard {standard:e} <= adaptive {adaptive:e}"))?;
    ensure((ratio / 0.09 - 1.0).abs() <= 0.2, || format!("ratio {ratio:.4} outside 0.09 +- 20%"))?;
    Ok(format!("gap standard {standard:.4e}, w=0.7 {adaptive:.4e}, ratio {ratio:.4}"))
}

// 11 ------------------------------------------------------------------------

fn dense_bicubic(img: &Tensor<f32>, oh: usize, ow: usize) -> Tensor<f32> {
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let (ry, rx) = (h as f64 / oh as f64, w as f64 / ow as f64);
    Tensor::from_fn([c, oh, ow], |idx| {
        let (ch, i, j) = (idx / (oh * ow), (idx / ow) % oh, idx % ow);
        let (cy, cx) = ((i as f64 + 0.5) * ry - 0.5, (j as f64 + 0.5) * rx - 0.5);
        let (mut acc, mut norm) = (0.0, 0.0);
        for y in 0..h {
            for x in 0..w {
                let k = cubic((y as f64 - cy) / ry.max(1.0)) * cubic((x as f64 - cx) / rx.max(1.0));
                acc += k * img.data()[(ch * h + y) * w + x] as f64;
                norm += k;
            }
        }
        (acc / norm).clamp(0.0, 1.0) as f32
    })
}

fn dense_blur(img: &Tensor<f32>, sigma: f64) -> Tensor<f32> {
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let r = (3.0 * sigma).ceil() as isize;
    let mirror = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let mut i = i;
        while i < 0 || i >= n {
            i = if i < 0 { -i - 1 } else { 2 * n - 1 - i };
        }
        i as usize
    };
    let g = |dy: isize, dx: isize| (-((dy * dy + dx * dx) as f64) / (2.0 * sigma * sigma)).exp();
    let z: f64 = (-r..=r).flat_map(|dy| (-r..=r).map(move |dx| g(dy, dx))).sum();
    Tensor::from_fn([c, h, w], |idx| {
        let (ch, y, x) = (idx / (h * w), (idx / w) % h, idx % w);
        let mut acc = 0.0;
        for dy in -r..=r {
            for dx in -r..=r {
                let (sy, sx) = (mirror(y as isize + dy, h), mirror(x as isize + dx, w));
                acc += g(dy, dx) * img.data()[(ch * h + sy) * w + sx] as f64;
            }
        }
        (acc / z) as f32
    })
}

fn max_abs(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    a.data().iter().zip(b.data()).map(|(&x, &y)| (x as f64 - y as f64).abs()).fold(0.0, f64::max)
}

fn degradation_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut bic, mut blur, mut jpeg) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..5 {
        let img = Tensor::from_fn([3, 16, 16], |_| rng.random::<f32>());
        for (oh, ow) in [(8, 8), (32, 32), (11, 13)] {
            let ours = bicubic_resize(&img, oh, ow).map_err(|e| e.to_string())?;
            bic = bic.max(max_abs(&ours, &dense_bicubic(&img, oh, ow)));
        }
        for sigma in [0.5, 1.2, 2.0] {
            let ours = gaussian_blur(&img, sigma).map_err(|e| e.to_string())?;
            blur = blur.max(max_abs(&ours, &dense_blur(&img, sigma)));
        }
        jpeg = jpeg.max(max_abs(&jpeg_like(&img, 100).map_err(|e| e.to_string())?, &img));
    }
    ensure(bic < 1e-5, || format!("bicubic max abs err {bic:e}"))?;
    ensure(blur < 1e-5, || format!("blur max abs err {blur:e}"))?;
    ensure(jpeg <= 2.0 / 255.0, || format!("jpeg q100 max abs err {jpeg:e}"))?;
    for v in [0.0f32, 0.3, 0.77, 1.0] {
        let flat = Tensor::full([3, 16, 16], v);
        for sigma in [0.5, 2.0] {
            let e = max_abs(&gaussian_blur(&flat, sigma).map_err(|e| e.to_string())?, &flat);
            ensure(e < 1e-6, || format!("blur moves constant {v} by {e:e}"))?;
        }
        for q in [10, 50, 90, 100] {
            let e = max_abs(&jpeg_like(&flat, q).map_err(|e| e.to_string())?, &flat);
            ensure(e < 1e-6, || format!("jpeg q{q} moves constant {v} by {e:e}"))?;
        }
    }
    Ok(format!("bicubic {bic:.1e}, blur {blur:.1e}, jpeg q100 {jpeg:.1e}; constants fixed"))
}

// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    let criteria: [(usize, &str, fn() -> Outcome); 11] = [
        (1, "variance-shift formula", variance_shift_grid),
        (2, "quadratic damping", quadratic_damping),
        (3, "eval identity", eval_identity),
        (4, "gradient suite", gradient_suite),
        (5, "annealing schedule", annealing_schedule),
        (6, "cosine schedule", cosine_schedule),
        (7, "directional toy reproduction", directional_reproduction),
        (8, "determinism", determinism),
        (9, "ablation energy conservation", ablation_energy),
        (10, "feature-statistics drift", feature_drift),
        (11, "degradation oracles", degradation_oracles),
    ];
    let selected: Option<Vec<usize>> =
        std::env::var("ADROP_CRITERIA").ok().map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut failed = 0;
    for (id, name, run) in criteria {
        if selected.as_ref().is_some_and(|s| !s.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id}: PASS {name} ({detail}) [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id}: FAIL {name} ({detail}) [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
