use std::error::Error as StdError;
use std::fs;
use std::path::Path;

use adrop_core::checkpoint::Checkpoint;
use adrop_core::config::ExperimentConfig;
use adrop_core::dataset::{load_dir, save_png, synthetic_set, NamedImage, PairDataset};
use adrop_core::degrade::{parse_combos, ComboName};
use adrop_core::diagnostics::{
    ablation_csv, channel_ablation, degrade_set, degraded_pairs, evaluate, feature_statistics, fmt_sig6, metrics_csv,
    stats_csv, write_csv, BicubicUpsampler, FeatureScope, SuperResolver,
};
use adrop_core::model::SRNet;
use adrop_core::seed::derive_seed;
use adrop_core::tensor::Tensor;
use adrop_core::train::{loss_csv, w_trace_csv, Trainer};
use adrop_core::variance::{variance_shift_monte_carlo, verification_grid, SampleShape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{AblateArgs, DataSource, DegradeArgs, EvalArgs, StatsArgs, SyntheticShape, TrainArgs, VerifyArgs};

type CmdResult<T = ()> = Result<T, Box<dyn StdError>>;

/// Synthetic training and evaluation sets come from disjoint streams.
const TRAIN_IMAGES: u64 = 1;
const EVAL_IMAGES: u64 = 2;

fn images(src: &DataSource, shape: &SyntheticShape, seed: u64, stream: u64) -> CmdResult<(String, Vec<NamedImage>)> {
    match (&src.data, src.synthetic) {
        (Some(dir), _) => {
            let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "data".into());
            Ok((name, load_dir(dir)?))
        }
        (None, Some(n)) => {
            let s = shape.synthetic_size;
            Ok(("synthetic".into(), synthetic_set(n, s, s, derive_seed(seed, &[stream]))))
        }
        (None, None) => Err("one of --data or --synthetic is required".into()),
    }
}

fn apply_overrides(cfg: &mut ExperimentConfig, overrides: &[String]) -> CmdResult {
    for (i, kv) in overrides.iter().enumerate() {
        let (k, v) = kv.split_once('=').ok_or_else(|| format!("--set expects KEY=VALUE, got `{kv}`"))?;
        cfg.set(i + 1, k.trim(), v.trim()).map_err(|e| format!("--set {kv}: {e}"))?;
    }
    Ok(())
}

fn load_config(path: Option<&Path>, overrides: &[String]) -> CmdResult<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            ExperimentConfig::parse(&text).map_err(|e| format!("{}: {e}", p.display()))?
        }
        None => ExperimentConfig::default(),
    };
    apply_overrides(&mut cfg, overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn write_text(path: &Path, text: &str) -> CmdResult {
    write_csv(path, text)?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_sig6).unwrap_or_default()
}

pub fn degrade(a: DegradeArgs) -> CmdResult {
    let combos = parse_combos(&a.combos)?;
    let images = load_dir(&a.input)?;
    let mut manifest = String::from("filename,combo,blur_sigma,noise_sigma,quality,seed\n");
    for combo in combos {
        let dir = a.out.join(combo.as_str());
        fs::create_dir_all(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;
        for (named, (_, d)) in images.iter().zip(degrade_set(&images, combo, a.scale, a.seed)?) {
            save_png(&dir.join(&named.name), &d.image)?;
            manifest.push_str(&format!(
                "{},{},{},{},{},{}\n",
                named.name,
                combo,
                opt(d.spec.blur_sigma()),
                opt(d.spec.noise_sigma()),
                d.spec.quality().map(|q| q.to_string()).unwrap_or_default(),
                d.spec.seed
            ));
        }
    }
    write_text(&a.out.join("manifest.csv"), &manifest)
}

pub fn train(a: TrainArgs) -> CmdResult {
    let (cfg, mut trainer) = match &a.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let trainer = ck.trainer()?;
            (ck.config, trainer)
        }
        None => {
            let mut cfg = load_config(a.config.as_deref(), &a.overrides)?;
            if let Some(seed) = a.seed {
                cfg.train.seed = seed;
            }
            let model = SRNet::build(cfg.model.clone(), cfg.train.seed)?;
            let trainer = Trainer::new(model, cfg.train.clone())?;
            (cfg, trainer)
        }
    };
    let seed = cfg.train.seed;
    let (_, imgs) = images(&a.source, &a.shape, seed, TRAIN_IMAGES)?;
    let data = PairDataset::from_images(
        &imgs,
        cfg.model.scale,
        cfg.train.patch_size,
        cfg.data.patches_per_image,
        &cfg.data.degradation(),
        derive_seed(seed, &[0xda7a]),
    )?;
    let end = a.until.unwrap_or(cfg.train.total_iters).min(cfg.train.total_iters);
    let start = trainer.iter;
    while trainer.iter < end {
        let row = trainer.step(&data)?;
        if row.iter % cfg.train.w_log_every == 0 || row.iter + 1 == end {
            println!("iter {:>6}  lr {:.3e}  loss {:.6}", row.iter, row.lr, row.loss);
        }
    }
    fs::create_dir_all(&a.out).map_err(|e| format!("{}: {e}", a.out.display()))?;
    write_text(&a.out.join("loss.csv"), &loss_csv(&trainer.loss_trace))?;
    write_text(&a.out.join("w_trace.csv"), &w_trace_csv(&trainer.w_trace))?;
    write_text(&a.out.join("config.txt"), &cfg.to_text())?;
    Checkpoint::from_trainer(&trainer, &cfg.data).save(&a.out.join("model.ckpt"))?;
    println!("trained iterations {start}..{end}; wrote {}", a.out.display());
    Ok(())
}

fn print_table(records: &[adrop_core::diagnostics::MetricsRecord]) {
    println!("{:<10} {:>10} {:>5}", "combo", "psnr_db", "n");
    for r in records {
        let flag = if r.capped > 0 { format!("  ({} capped)", r.capped) } else { String::new() };
        println!("{:<10} {:>10.4} {:>5}{flag}", r.combo.as_str(), r.psnr_db, r.n);
    }
}

pub fn eval(a: EvalArgs) -> CmdResult {
    let (name, imgs) = images(&a.source, &a.shape, a.seed, EVAL_IMAGES)?;
    let dataset = a.dataset_name.clone().unwrap_or(name);
    let (mut model, default_combos): (Box<dyn SuperResolver>, Vec<ComboName>) = match &a.checkpoint {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            (Box::new(ck.model()?), ck.config.data.eval_combos.clone())
        }
        None => (Box::new(BicubicUpsampler { scale: a.scale }), ComboName::ALL.to_vec()),
    };
    let combos = match &a.combos {
        Some(s) => parse_combos(s)?,
        None => default_combos,
    };
    let records = evaluate(model.as_mut(), &dataset, &imgs, &combos, a.seed)?;
    print_table(&records);
    write_text(&a.out, &metrics_csv(&records))
}

pub fn ablate(a: AblateArgs) -> CmdResult {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let mut model = ck.model()?;
    let combo: ComboName = a.combo.parse()?;
    let (_, imgs) = images(&a.source, &a.shape, a.seed, EVAL_IMAGES)?;
    let pairs = degraded_pairs(&imgs, combo, model.config().scale, a.seed)?;
    let blocks: Vec<usize> = match a.block {
        Some(b) => vec![b],
        None => (0..model.config().num_blocks).collect(),
    };
    let mut curves = Vec::new();
    for b in blocks {
        let curve = channel_ablation(&mut model, b, &pairs)?;
        let valid = curve.entries.iter().filter(|e| !e.flagged()).map(|e| e.psnr_db);
        let worst = valid.fold(f64::INFINITY, f64::min);
        println!("block {b}: baseline {:.4} dB, worst single-channel occlusion {:.4} dB", curve.baseline_psnr_db, worst);
        curves.push(curve);
    }
    write_text(&a.out, &ablation_csv(&curves))
}

pub fn stats(a: StatsArgs) -> CmdResult {
    let mut model = match &a.checkpoint {
        Some(path) => Checkpoint::load(path)?.model()?,
        None => {
            let cfg = load_config(a.config.as_deref(), &a.overrides)?;
            SRNet::build(cfg.model, a.seed)?
        }
    };
    if a.randomize_residual {
        model.randomize_residual_convs(a.seed);
    }
    let scope: FeatureScope = a.scope.parse()?;
    let s = a.input_size;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(a.seed, &[0x57a7]));
    let input = Tensor::from_fn([1, 3, s, s], |_| rng.random::<f32>());
    let stats = feature_statistics(&mut model, &input, a.samples, scope)?;
    for r in &stats.rows {
        println!(
            "block {} {:<4} train var {:.6e}  eval var {:.6e}  gap {:.6e}",
            r.block,
            r.stage.as_str(),
            r.train_var,
            r.eval_var,
            r.gap()
        );
    }
    write_text(&a.out, &stats_csv(&stats))
}

pub fn verify(a: VerifyArgs) -> CmdResult {
    let cells = if a.grid {
        verification_grid()
    } else {
        match (a.mu, a.sigma2, a.p, a.w) {
            (Some(mu), Some(s2), Some(p), Some(w)) => vec![(mu, s2, p, w)],
            _ => return Err("--mu, --sigma2, --p and --w are required without --grid".into()),
        }
    };
    let mut csv = String::from("mu,sigma2,p,w,s_closed,s_mc,n,rel_err\n");
    for (i, &(mu, sigma2, p, w)) in cells.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(a.seed, &[i as u64]));
        let r = variance_shift_monte_carlo(mu, sigma2, p, w, a.n, SampleShape::default(), &mut rng)?;
        let row = format!(
            "{},{},{},{},{},{},{},{}\n",
            fmt_sig6(mu),
            fmt_sig6(sigma2),
            fmt_sig6(p),
            fmt_sig6(w),
            fmt_sig6(r.s_closed),
            fmt_sig6(r.s_mc),
            r.n_samples,
            fmt_sig6(r.rel_err())
        );
        print!("{}{row}", if i == 0 { "mu,sigma2,p,w,s_closed,s_mc,n,rel_err\n" } else { "" });
        csv.push_str(&row);
    }
    match &a.out {
        Some(path) => write_text(path, &csv),
        None => Ok(()),
    }
}
