//! Deterministic training: L1 loss, bias-corrected Adam, a single cosine
//! learning-rate period, and block-by-block annealing of `w` for the
//! explicit variant.
//!
//! Every batch is drawn from a generator derived from `(seed, iter)`, so a
//! run resumed at iteration `k` sees exactly the batches the uninterrupted
//! run would have seen.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::PairDataset;
use crate::dropout::{DropoutVariant, Mode};
use crate::error::{Error, Result};
use crate::model::SRNet;
use crate::seed::derive_seed;
use crate::tensor::{Scalar, Tape, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LrSchedule {
    #[default]
    Cosine,
}

impl LrSchedule {
    pub fn as_str(self) -> &'static str {
        "cosine"
    }
}

impl FromStr for LrSchedule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cosine" => Ok(LrSchedule::Cosine),
            _ => Err(format!("unknown lr schedule `{s}` (expected cosine)")),
        }
    }
}

impl fmt::Display for LrSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub total_iters: usize,
    pub batch_size: usize,
    /// Side of the square LR training patch.
    pub patch_size: usize,
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Iterations between consecutive block annealings; `None` means
    /// `total_iters / (B + 1)`.
    pub anneal_interval: Option<usize>,
    pub lr_schedule: LrSchedule,
    /// Period of the `w_trace` rows.
    pub w_log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_iters: 2000,
            batch_size: 16,
            patch_size: 32,
            lr0: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            anneal_interval: None,
            lr_schedule: LrSchedule::Cosine,
            w_log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid("train config", msg));
        if self.total_iters == 0 {
            return bad("total_iters must be positive".into());
        }
        if self.batch_size == 0 || self.patch_size == 0 || self.w_log_every == 0 {
            return bad("batch_size, patch_size and w_log_every must be positive".into());
        }
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 = {} must be finite and non-negative", self.lr0));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} = {b} must lie in [0, 1)"));
            }
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps = {} must be positive", self.eps));
        }
        Ok(())
    }

    pub fn interval(&self, num_blocks: usize) -> usize {
        self.anneal_interval.unwrap_or(self.total_iters / (num_blocks + 1))
    }

    pub fn lr(&self, iter: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Cosine => cosine_lr(iter, self.total_iters, self.lr0),
        }
    }
}

/// `0.5 * lr0 * (1 + cos(pi * iter / total))`, with `iter` clamped to `total`.
pub fn cosine_lr(iter: usize, total: usize, lr0: f64) -> f64 {
    if iter == 0 {
        return lr0;
    }
    if total == 0 || iter >= total {
        return 0.0;
    }
    0.5 * lr0 * (1.0 + (PI * iter as f64 / total as f64).cos())
}

/// Per-block `w` as a function of the iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnnealSchedule {
    pub num_blocks: usize,
    pub interval: usize,
    pub w_init: f64,
}

impl AnnealSchedule {
    /// `w` of block `k`: 1 from iteration `(k + 1) * interval` on.
    pub fn weight(&self, block: usize, iter: usize) -> f64 {
        if iter as u128 >= (block as u128 + 1) * self.interval as u128 {
            1.0
        } else {
            self.w_init
        }
    }

    pub fn weights(&self, iter: usize) -> Vec<f64> {
        (0..self.num_blocks).map(|k| self.weight(k, iter)).collect()
    }
}

pub fn anneal_update(schedule: &AnnealSchedule, iter: usize) -> Vec<f64> {
    schedule.weights(iter)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl From<&TrainConfig> for AdamConfig {
    fn from(c: &TrainConfig) -> Self {
        AdamConfig { beta1: c.beta1, beta2: c.beta2, eps: c.eps }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T = f32> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        AdamState { m: zeros(), v: zeros(), step: 0 }
    }
}

/// One bias-corrected Adam update in place. Arithmetic runs in f64.
pub fn adam_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Vec<T>],
    state: &mut AdamState<T>,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    for (name, n) in [("grads", grads.len()), ("m", state.m.len()), ("v", state.v.len())] {
        if n != params.len() {
            return Err(Error::ShapeMismatch { op: "adam_step", dim: tensor_count(name), expected: params.len(), actual: n });
        }
    }
    for (i, p) in params.iter().enumerate() {
        for n in [grads[i].len(), state.m[i].len(), state.v[i].len()] {
            if n != p.len() {
                return Err(Error::ShapeMismatch { op: "adam_step", dim: "parameter size", expected: p.len(), actual: n });
            }
        }
        if state.m[i].shape() != p.shape() || state.v[i].shape() != p.shape() {
            return Err(Error::invalid("adam_step", format!("moment shape differs from parameter {i}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
        for ((pj, &gj), (mj, vj)) in p.data_mut().iter_mut().zip(&grads[i]).zip(m.iter_mut().zip(v.iter_mut())) {
            let g = gj.as_f64();
            let mn = cfg.beta1 * mj.as_f64() + (1.0 - cfg.beta1) * g;
            let vn = cfg.beta2 * vj.as_f64() + (1.0 - cfg.beta2) * g * g;
            *mj = T::of(mn);
            *vj = T::of(vn);
            let update = lr * (mn / bc1) / ((vn / bc2).sqrt() + cfg.eps);
            *pj = T::of(pj.as_f64() - update);
        }
    }
    Ok(())
}

fn tensor_count(name: &str) -> &'static str {
    match name {
        "grads" => "gradient count",
        "m" => "first-moment count",
        _ => "second-moment count",
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRow {
    pub iter: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WRow {
    pub iter: usize,
    pub block: usize,
    pub w_mean: f64,
}

/// Resumable training state around a model.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: SRNet<f32>,
    pub cfg: TrainConfig,
    pub adam: AdamState<f32>,
    /// Next iteration to run.
    pub iter: usize,
    pub loss_trace: Vec<LossRow>,
    pub w_trace: Vec<WRow>,
}

impl Trainer {
    pub fn new(model: SRNet<f32>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let adam = AdamState::new(model.params().tensors());
        let mut trainer = Trainer { model, cfg, adam, iter: 0, loss_trace: Vec::new(), w_trace: Vec::new() };
        trainer.apply_schedule(0)?;
        Ok(trainer)
    }

    /// Continues from saved state; the traces start empty.
    pub fn resume(model: SRNet<f32>, cfg: TrainConfig, adam: AdamState<f32>, iter: usize) -> Result<Self> {
        cfg.validate()?;
        if adam.m.len() != model.params().len() {
            return Err(Error::ShapeMismatch {
                op: "resume",
                dim: "optimizer tensor count",
                expected: model.params().len(),
                actual: adam.m.len(),
            });
        }
        let mut trainer = Trainer { model, cfg, adam, iter, loss_trace: Vec::new(), w_trace: Vec::new() };
        trainer.apply_schedule(iter)?;
        Ok(trainer)
    }

    pub fn schedule(&self) -> Option<AnnealSchedule> {
        let mc = self.model.config();
        (mc.dropout.variant == DropoutVariant::ExplicitAnnealed).then(|| AnnealSchedule {
            num_blocks: mc.num_blocks,
            interval: self.cfg.interval(mc.num_blocks),
            w_init: mc.dropout.w_init,
        })
    }

    fn apply_schedule(&mut self, iter: usize) -> Result<()> {
        if let Some(s) = self.schedule() {
            self.model.set_block_weights(&s.weights(iter))?;
        }
        Ok(())
    }

    pub fn is_done(&self) -> bool {
        self.iter >= self.cfg.total_iters
    }

    /// Runs one iteration and returns its loss row.
    pub fn step(&mut self, data: &PairDataset) -> Result<LossRow> {
        let iter = self.iter;
        self.apply_schedule(iter)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, &[0xba7c, iter as u64]));
        let indices: Vec<usize> = (0..self.cfg.batch_size).map(|_| rng.random_range(0..data.len())).collect();
        let (lr_batch, hr_batch) = data.batch(&indices)?;

        let mut tape = Tape::new();
        let params = self.model.bind(&mut tape, true);
        let x = tape.constant(lr_batch);
        let target = tape.constant(hr_batch);
        let out = match self.model.forward_with_taps(&mut tape, &params, x, Mode::Train) {
            Ok(out) => out,
            Err(Error::NonFiniteActivation { .. }) => return Err(Error::NonFiniteLoss { iter }),
            Err(e) => return Err(e),
        };
        let loss_var = tape.l1_loss(out.output, target)?;
        let loss = tape.value(loss_var).data()[0] as f64;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { iter });
        }

        if iter % self.cfg.w_log_every == 0 || iter + 1 == self.cfg.total_iters {
            let fixed = self.model.block_weights();
            for (block, w) in fixed.iter().enumerate() {
                let w_mean = match (w, out.predicted[block]) {
                    (Some(w), _) => *w,
                    (None, Some(v)) => {
                        let d = tape.value(v).data();
                        d.iter().map(|&x| x as f64).sum::<f64>() / d.len() as f64
                    }
                    (None, None) => f64::NAN,
                };
                self.w_trace.push(WRow { iter, block, w_mean });
            }
        }

        tape.backward(loss_var)?;
        let grads = self.model.params().grads(&tape, &params);
        drop(tape);
        let lr = self.cfg.lr(iter);
        let adam_cfg = AdamConfig::from(&self.cfg);
        adam_step(self.model.params_mut().tensors_mut(), &grads, &mut self.adam, lr, &adam_cfg)?;

        let row = LossRow { iter, lr, loss };
        self.loss_trace.push(row);
        self.iter += 1;
        Ok(row)
    }

    /// Runs until iteration `until` (exclusive) or the end of training.
    pub fn run_until(&mut self, data: &PairDataset, until: usize) -> Result<()> {
        let end = until.min(self.cfg.total_iters);
        while self.iter < end {
            self.step(data)?;
        }
        // After the last iteration the explicit weights reflect the final schedule.
        self.apply_schedule(self.iter)?;
        Ok(())
    }

    pub fn run(&mut self, data: &PairDataset) -> Result<()> {
        self.run_until(data, self.cfg.total_iters)
    }
}

/// Builds a model from `seed` and trains it for the whole schedule.
pub fn train_loop(model: SRNet<f32>, data: &PairDataset, cfg: TrainConfig) -> Result<Trainer> {
    let mut trainer = Trainer::new(model, cfg)?;
    trainer.run(data)?;
    Ok(trainer)
}

pub const LOSS_CSV_HEADER: &str = "iter,lr,loss";
pub const W_TRACE_CSV_HEADER: &str = "iter,block,w_mean";

/// Loss trace as CSV. Floats use the shortest exact representation so the
/// file is a faithful record of the run.
pub fn loss_csv(rows: &[LossRow]) -> String {
    let mut s = String::from(LOSS_CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!("{},{:e},{:e}\n", r.iter, r.lr, r.loss));
    }
    s
}

pub fn w_trace_csv(rows: &[WRow]) -> String {
    let mut s = String::from(W_TRACE_CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!("{},{},{:e}\n", r.iter, r.block, r.w_mean));
    }
    s
}
