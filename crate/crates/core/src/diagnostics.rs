//! PSNR evaluation, channel ablation and train/eval feature statistics.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{crop_to_multiple, NamedImage};
use crate::degrade::{apply_combo, bicubic_resize, ComboName, Degraded, DegradationRanges};
use crate::dropout::Mode;
use crate::error::{Error, Result};
use crate::model::{LayerModes, SRNet, LEAKY_SLOPE};
use crate::seed::derive_seed;
use crate::tensor::{Scalar, Tape, Tensor};

/// Reported for exact matches instead of an infinite value.
pub const PSNR_CAP_DB: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Psnr {
    pub db: f64,
    /// True when MSE was zero and `db` is the cap.
    pub capped: bool,
}

/// `10 log10(max_val^2 / MSE)`, accumulated in f64.
pub fn psnr<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, max_val: f64) -> Result<Psnr> {
    if pred.shape() != target.shape() {
        return Err(Error::invalid("psnr", format!("shape {:?} vs {:?}", pred.shape(), target.shape())));
    }
    if !(max_val > 0.0) {
        return Err(Error::invalid("psnr", format!("max_val = {max_val} must be positive")));
    }
    if pred.is_empty() {
        return Err(Error::invalid("psnr", "empty images"));
    }
    let sse: f64 = pred.data().iter().zip(target.data()).map(|(&a, &b)| (a.as_f64() - b.as_f64()).powi(2)).sum();
    let mse = sse / pred.len() as f64;
    if mse == 0.0 {
        return Ok(Psnr { db: PSNR_CAP_DB, capped: true });
    }
    Ok(Psnr { db: 10.0 * (max_val * max_val / mse).log10(), capped: false })
}

/// Anything that maps a `[3, h, w]` LR image to a `[3, sh, sw]` estimate.
pub trait SuperResolver {
    fn scale(&self) -> usize;
    fn super_resolve(&mut self, lr: &Tensor<f32>) -> Result<Tensor<f32>>;
}

impl SuperResolver for SRNet<f32> {
    fn scale(&self) -> usize {
        self.config().scale
    }

    /// Eval-mode forward, clamped to the displayable range.
    fn super_resolve(&mut self, lr: &Tensor<f32>) -> Result<Tensor<f32>> {
        let out = self.upscale(&lr.clone().unsqueeze0())?;
        let img = out.unbatch().remove(0);
        Ok(clamp01(&img))
    }
}

/// Plain bicubic interpolation, the no-learning reference.
#[derive(Clone, Copy, Debug)]
pub struct BicubicUpsampler {
    pub scale: usize,
}

impl SuperResolver for BicubicUpsampler {
    fn scale(&self) -> usize {
        self.scale
    }

    fn super_resolve(&mut self, lr: &Tensor<f32>) -> Result<Tensor<f32>> {
        let [_, h, w] = three(lr)?;
        bicubic_resize(lr, h * self.scale, w * self.scale)
    }
}

fn clamp01(t: &Tensor<f32>) -> Tensor<f32> {
    let data = t.data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
    Tensor::new(t.shape().to_vec(), data).expect("same shape")
}

fn three(t: &Tensor<f32>) -> Result<[usize; 3]> {
    match *t.shape() {
        [c, h, w] => Ok([c, h, w]),
        _ => Err(Error::invalid("image", format!("expected [3, H, W], got {:?}", t.shape()))),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub dataset: String,
    pub combo: ComboName,
    /// Mean of the per-image PSNRs.
    pub psnr_db: f64,
    pub n: usize,
    /// Images whose PSNR hit the cap.
    pub capped: usize,
}

/// Applies one combo to every image (cropped to a multiple of `scale`).
/// Image `i` under combo `c` draws its parameters from
/// `derive_seed(seed, [c, i])`. Returns `(HR, degraded)` per image.
pub fn degrade_set(images: &[NamedImage], combo: ComboName, scale: usize, seed: u64) -> Result<Vec<(Tensor<f32>, Degraded)>> {
    let ranges = DegradationRanges::default();
    let code = ComboName::ALL.iter().position(|&c| c == combo).expect("listed") as u64;
    images
        .iter()
        .enumerate()
        .map(|(i, named)| {
            let hr = crop_to_multiple(&named.image, scale)?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0xe7a1, code, i as u64]));
            let lr = apply_combo(&hr, combo, scale, &ranges, &mut rng)?;
            Ok((hr, lr))
        })
        .collect()
}

/// `(LR, HR)` pairs from [`degrade_set`].
pub fn degraded_pairs(
    images: &[NamedImage],
    combo: ComboName,
    scale: usize,
    seed: u64,
) -> Result<Vec<(Tensor<f32>, Tensor<f32>)>> {
    Ok(degrade_set(images, combo, scale, seed)?.into_iter().map(|(hr, d)| (d.image, hr)).collect())
}

/// Mean PSNR of `model` on every combo, one record per combo.
pub fn evaluate(
    model: &mut dyn SuperResolver,
    dataset: &str,
    images: &[NamedImage],
    combos: &[ComboName],
    seed: u64,
) -> Result<Vec<MetricsRecord>> {
    if images.is_empty() {
        return Err(Error::EmptyDataset(format!("evaluation set `{dataset}`")));
    }
    let scale = model.scale();
    combos
        .iter()
        .map(|&combo| {
            let (mut total, mut capped) = (0.0, 0);
            let pairs = degraded_pairs(images, combo, scale, seed)?;
            for (lr, hr) in &pairs {
                let p = psnr(&model.super_resolve(lr)?, hr, 1.0)?;
                total += p.db;
                capped += p.capped as usize;
            }
            Ok(MetricsRecord { dataset: dataset.to_string(), combo, psnr_db: total / pairs.len() as f64, n: pairs.len(), capped })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationEntry {
    pub channel: usize,
    /// Mean PSNR over the images whose masked feature kept some energy.
    pub psnr_db: f64,
    /// Mean of `||x|| / ||x_masked||` over the same images.
    pub rescale: f64,
    /// Largest `| ||rescaled|| - ||x|| | / ||x||` seen.
    pub energy_rel_err: f64,
    /// Images where masking left zero energy; skipped in the means.
    pub zero_energy: usize,
}

impl AblationEntry {
    pub fn flagged(&self) -> bool {
        self.zero_energy > 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationCurve {
    pub block: usize,
    pub baseline_psnr_db: f64,
    pub entries: Vec<AblationEntry>,
}

/// Occludes each channel of block `block`'s output in turn, rescales the
/// feature back to its original L2 norm, and finishes the forward pass.
pub fn channel_ablation(
    model: &mut SRNet<f32>,
    block: usize,
    eval_set: &[(Tensor<f32>, Tensor<f32>)],
) -> Result<AblationCurve> {
    let b = model.config().num_blocks;
    if block >= b {
        return Err(Error::invalid("channel_ablation", format!("block {block} out of range for {b} blocks")));
    }
    if eval_set.is_empty() {
        return Err(Error::EmptyDataset("ablation set".into()));
    }
    let c = model.config().channels;
    let modes = LayerModes::uniform(b, Mode::Eval);
    let mut baseline = 0.0;
    let mut sums = vec![(0.0f64, 0.0f64, 0.0f64, 0usize, 0usize); c];
    for (lr, hr) in eval_set {
        let mut tape = Tape::new();
        let params = model.bind(&mut tape, false);
        let x = tape.constant(lr.clone().unsqueeze0());
        let out = model.forward_layers(&mut tape, &params, x, &modes)?;
        baseline += psnr(&clamp01(&tape.value(out.output).unbatch()[0]), hr, 1.0)?.db;
        let tap = tape.value(out.taps[block]).clone();
        let plane = tap.len() / c;
        let e0 = tap.l2_norm();
        for (ch, acc) in sums.iter_mut().enumerate() {
            let mut masked = tap.clone();
            masked.data_mut()[ch * plane..(ch + 1) * plane].iter_mut().for_each(|v| *v = 0.0);
            let e1 = masked.l2_norm();
            if e1 == 0.0 {
                acc.4 += 1;
                continue;
            }
            let factor = e0 / e1;
            masked.data_mut().iter_mut().for_each(|v| *v = (*v as f64 * factor) as f32);
            let err = (masked.l2_norm() - e0).abs() / e0;
            let h = tape.constant(masked);
            let resumed = model.forward_from(&mut tape, &params, block + 1, h, &modes)?;
            let p = psnr(&clamp01(&tape.value(resumed.output).unbatch()[0]), hr, 1.0)?.db;
            acc.0 += p;
            acc.1 += factor;
            acc.2 = acc.2.max(err);
            acc.3 += 1;
        }
    }
    let entries = sums
        .into_iter()
        .enumerate()
        .map(|(channel, (p, f, err, n, zero))| AblationEntry {
            channel,
            psnr_db: if n > 0 { p / n as f64 } else { f64::NAN },
            rescale: if n > 0 { f / n as f64 } else { f64::NAN },
            energy_rel_err: err,
            zero_energy: zero,
        })
        .collect();
    Ok(AblationCurve { block, baseline_psnr_db: baseline / eval_set.len() as f64, entries })
}

/// Which blocks are stochastic during the Train-mode passes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureScope {
    AllBlocks,
    /// Only this block draws masks; everything else runs in Eval mode.
    Block(usize),
}

impl fmt::Display for FeatureScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureScope::AllBlocks => f.write_str("all"),
            FeatureScope::Block(k) => write!(f, "{k}"),
        }
    }
}

impl FromStr for FeatureScope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(FeatureScope::AllBlocks),
            k => k.parse().map(FeatureScope::Block).map_err(|_| format!("scope `{s}` is neither `all` nor a block index")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    /// The block's regularized branch, before the skip add.
    Pre,
    /// Leaky ReLU of the regularized branch.
    Post,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Pre => "pre",
            Stage::Post => "post",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StageStats {
    pub block: usize,
    pub stage: Stage,
    pub train_mean: f64,
    pub train_var: f64,
    pub eval_mean: f64,
    pub eval_var: f64,
}

impl StageStats {
    pub fn gap(&self) -> f64 {
        self.train_var - self.eval_var
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStats {
    pub scope: FeatureScope,
    pub n_mask_samples: usize,
    pub rows: Vec<StageStats>,
}

impl FeatureStats {
    pub fn get(&self, block: usize, stage: Stage) -> Option<&StageStats> {
        self.rows.iter().find(|r| r.block == block && r.stage == stage)
    }
}

pub const MIN_MASK_SAMPLES: usize = 1000;

#[derive(Clone, Copy, Debug, Default)]
struct Moments {
    n: f64,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.n += 1.0;
        self.sum += v;
        self.sum_sq += v * v;
    }

    fn mean(&self) -> f64 {
        self.sum / self.n
    }

    fn var(&self) -> f64 {
        let m = self.mean();
        self.sum_sq / self.n - m * m
    }
}

/// Pooled per-block feature moments over `n_mask_samples` Train-mode passes
/// with fresh masks, against one Eval-mode pass on the same input.
pub fn feature_statistics(
    model: &mut SRNet<f32>,
    input: &Tensor<f32>,
    n_mask_samples: usize,
    scope: FeatureScope,
) -> Result<FeatureStats> {
    if n_mask_samples < MIN_MASK_SAMPLES {
        return Err(Error::invalid(
            "feature_statistics",
            format!("n_mask_samples = {n_mask_samples} is below {MIN_MASK_SAMPLES}"),
        ));
    }
    let b = model.config().num_blocks;
    let train_modes = match scope {
        FeatureScope::AllBlocks => LayerModes { blocks: vec![Mode::Train; b], final_dropout: Mode::Eval },
        FeatureScope::Block(k) if k < b => LayerModes::only_block(b, k),
        FeatureScope::Block(k) => {
            return Err(Error::invalid("feature_statistics", format!("block {k} out of range for {b} blocks")))
        }
    };
    let slope = LEAKY_SLOPE as f32;
    let post = |v: f32| if v > 0.0 { v } else { slope * v } as f64;

    let mut run = |modes: &LayerModes, acc: &mut [[Moments; 2]]| -> Result<()> {
        let mut tape = Tape::new();
        let params = model.bind(&mut tape, false);
        let x = tape.constant(input.clone());
        let out = model.forward_layers(&mut tape, &params, x, modes)?;
        for (block, &r) in out.regularized.iter().enumerate() {
            for &v in tape.value(r).data() {
                acc[block][0].push(v as f64);
                acc[block][1].push(post(v));
            }
        }
        Ok(())
    };

    let mut eval = vec![[Moments::default(); 2]; b];
    run(&LayerModes::uniform(b, Mode::Eval), &mut eval)?;
    let mut train = vec![[Moments::default(); 2]; b];
    for _ in 0..n_mask_samples {
        run(&train_modes, &mut train)?;
    }
    let mut rows = Vec::with_capacity(2 * b);
    for block in 0..b {
        for (s, stage) in [Stage::Pre, Stage::Post].into_iter().enumerate() {
            rows.push(StageStats {
                block,
                stage,
                train_mean: train[block][s].mean(),
                train_var: train[block][s].var(),
                eval_mean: eval[block][s].mean(),
                eval_var: eval[block][s].var(),
            });
        }
    }
    Ok(FeatureStats { scope, n_mask_samples, rows })
}

/// `%g`-style text with six significant digits.
pub fn fmt_sig6(v: f64) -> String {
    if !v.is_finite() {
        return if v.is_nan() { "nan".into() } else if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let exp = v.abs().log10().floor() as i32;
    // Rounding can carry into the next decade; recompute from the rounded text.
    let sci = format!("{v:.5e}");
    let (mantissa, e) = sci.split_once('e').expect("scientific");
    let exp = e.parse::<i32>().unwrap_or(exp);
    if !(-4..6).contains(&exp) {
        let m = trim_zeros(mantissa);
        return format!("{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs());
    }
    let decimals = (5 - exp).max(0) as usize;
    trim_zeros(&format!("{v:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub const METRICS_CSV_HEADER: &str = "dataset,combo,psnr_db,n";
pub const ABLATION_CSV_HEADER: &str = "block,channel,psnr_db,baseline_psnr_db,rescale,energy_rel_err,zero_energy";
pub const STATS_CSV_HEADER: &str = "block,stage,train_mean,train_var,eval_mean,eval_var,gap";

pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut s = format!("{METRICS_CSV_HEADER}\n");
    for r in records {
        s.push_str(&format!("{},{},{},{}\n", r.dataset, r.combo, fmt_sig6(r.psnr_db), r.n));
    }
    s
}

pub fn ablation_csv(curves: &[AblationCurve]) -> String {
    let mut s = format!("{ABLATION_CSV_HEADER}\n");
    for c in curves {
        for e in &c.entries {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                c.block,
                e.channel,
                fmt_sig6(e.psnr_db),
                fmt_sig6(c.baseline_psnr_db),
                fmt_sig6(e.rescale),
                fmt_sig6(e.energy_rel_err),
                e.zero_energy
            ));
        }
    }
    s
}

pub fn stats_csv(stats: &FeatureStats) -> String {
    let mut s = format!("{STATS_CSV_HEADER}\n");
    for r in &stats.rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.block,
            r.stage.as_str(),
            fmt_sig6(r.train_mean),
            fmt_sig6(r.train_var),
            fmt_sig6(r.eval_mean),
            fmt_sig6(r.eval_var),
            fmt_sig6(r.gap())
        ));
    }
    s
}

pub fn write_csv(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
