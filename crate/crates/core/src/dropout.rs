//! Channel dropout and the adaptive dropout format
//! `f(x) = w * x + (1 - w) * dropout(x, p)`.
//!
//! Masks are drawn per `(sample, channel)` slice and survivors are scaled by
//! `1 / (1 - p)`, so the expected output equals the input. In
//! [`Mode::Eval`] both branches are the identity and the output is `x`
//! itself.
//!
//! RNG stream contract: every Train-mode call that actually perturbs
//! (`p > 0` and `w` not the constant 1) draws exactly one [`DropoutMask`],
//! consuming one `f64` from the generator per `(sample, channel)` slice in
//! row-major order. Eval mode and `w == 1` draw nothing.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::nn::{fan_in_uniform, Bound, ParamId, ParamStore};
use crate::tensor::{MixWeight, Scalar, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Mode {
    #[default]
    Train,
    Eval,
}

/// Which regularizer each residual block carries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum DropoutVariant {
    /// No intermediate dropout at all.
    None,
    /// Plain channel dropout, i.e. the adaptive format with `w = 0`.
    Standard,
    /// Adaptive format with a constant `w = w_init`.
    AdaptiveFixed,
    /// `w = w_init`, annealed to 1 block by block during training.
    #[default]
    ExplicitAnnealed,
    /// `w` predicted from the features by a small gating network.
    ImplicitLearned,
}

impl DropoutVariant {
    pub const ALL: [DropoutVariant; 5] = [
        DropoutVariant::None,
        DropoutVariant::Standard,
        DropoutVariant::AdaptiveFixed,
        DropoutVariant::ExplicitAnnealed,
        DropoutVariant::ImplicitLearned,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DropoutVariant::None => "none",
            DropoutVariant::Standard => "standard",
            DropoutVariant::AdaptiveFixed => "adaptive_fixed",
            DropoutVariant::ExplicitAnnealed => "explicit",
            DropoutVariant::ImplicitLearned => "implicit",
        }
    }
}

impl fmt::Display for DropoutVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DropoutVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DropoutVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown dropout variant `{s}`"))
    }
}

/// Shape of a predicted weight: `[B, 1]` (value) or `[B, C]` (vector).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum WeightFormat {
    Value,
    Vector,
}

/// How the implicit variant picks a [`WeightFormat`] per block.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum WeightFormatPolicy {
    /// Value before the model's midpoint split, vector from there on.
    #[default]
    Split,
    Value,
    Vector,
}

impl WeightFormatPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            WeightFormatPolicy::Split => "split",
            WeightFormatPolicy::Value => "value",
            WeightFormatPolicy::Vector => "vector",
        }
    }
}

impl FromStr for WeightFormatPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "split" => Ok(WeightFormatPolicy::Split),
            "value" => Ok(WeightFormatPolicy::Value),
            "vector" => Ok(WeightFormatPolicy::Vector),
            _ => Err(format!("unknown weight format `{s}` (expected split, value or vector)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropoutConfig {
    pub p: f64,
    pub variant: DropoutVariant,
    pub w_init: f64,
    pub w_format: WeightFormatPolicy,
}

impl Default for DropoutConfig {
    fn default() -> Self {
        DropoutConfig {
            p: 0.5,
            variant: DropoutVariant::default(),
            w_init: 0.7,
            w_format: WeightFormatPolicy::default(),
        }
    }
}

impl DropoutConfig {
    pub fn validate(&self) -> Result<()> {
        check_rate("dropout config", self.p)?;
        check_weight("dropout config", self.w_init)
    }

    /// The constant block weight a variant starts from. `None` for the
    /// implicit variant, whose weights are predicted.
    pub fn initial_weight(&self) -> Option<f64> {
        match self.variant {
            DropoutVariant::None => Some(1.0),
            DropoutVariant::Standard => Some(0.0),
            DropoutVariant::AdaptiveFixed | DropoutVariant::ExplicitAnnealed => Some(self.w_init),
            DropoutVariant::ImplicitLearned => None,
        }
    }
}

pub(crate) fn check_rate(op: &'static str, p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::invalid(op, format!("dropout rate p = {p} must lie in [0, 1)")));
    }
    Ok(())
}

fn check_weight(op: &'static str, w: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::invalid(op, format!("weight w = {w} must lie in [0, 1]")));
    }
    Ok(())
}

/// Binary keep indicators for each `(sample, channel)` slice.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask {
    keep: Vec<bool>,
    p: f64,
}

impl DropoutMask {
    pub fn sample(slices: usize, p: f64, rng: &mut (impl RngCore + ?Sized)) -> Result<Self> {
        check_rate("dropout mask", p)?;
        let keep = (0..slices).map(|_| rng.random::<f64>() >= p).collect();
        Ok(DropoutMask { keep, p })
    }

    pub fn from_keep(keep: Vec<bool>, p: f64) -> Result<Self> {
        check_rate("dropout mask", p)?;
        Ok(DropoutMask { keep, p })
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn scale(&self) -> f64 {
        1.0 / (1.0 - self.p)
    }

    /// `1 / (1 - p)` for kept slices, 0 for dropped ones.
    pub fn factors<T: Scalar>(&self) -> Vec<T> {
        let s = T::of(self.scale());
        self.keep.iter().map(|&k| if k { s } else { T::zero() }).collect()
    }
}

/// Block weight argument of [`adaptive_dropout`].
#[derive(Clone, Copy, Debug)]
pub enum DropWeight {
    Scalar(f64),
    /// A `[N, 1]` or `[N, C]` tensor on the tape, e.g. a predictor output.
    Tensor(Var),
}

fn slices_of<T: Scalar>(tape: &Tape<T>, x: Var, op: &'static str) -> Result<usize> {
    let [n, c, _, _] = tape.value(x).dims4(op)?;
    Ok(n * c)
}

pub fn channel_dropout<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    p: f64,
    rng: &mut (impl RngCore + ?Sized),
    mode: Mode,
) -> Result<Var> {
    check_rate("channel_dropout", p)?;
    let slices = slices_of(tape, x, "channel_dropout")?;
    if mode == Mode::Eval {
        return Ok(x);
    }
    let mask = DropoutMask::sample(slices, p, rng)?;
    tape.channel_scale(x, mask.factors())
}

pub fn channel_dropout_with_mask<T: Scalar>(tape: &mut Tape<T>, x: Var, mask: &DropoutMask) -> Result<Var> {
    tape.channel_scale(x, mask.factors())
}

/// Adaptive dropout in `mode`. Returns the output and the mask it drew, if any.
pub fn adaptive_dropout<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    w: DropWeight,
    p: f64,
    rng: &mut (impl RngCore + ?Sized),
    mode: Mode,
) -> Result<(Var, Option<DropoutMask>)> {
    check_rate("adaptive_dropout", p)?;
    let slices = slices_of(tape, x, "adaptive_dropout")?;
    let mix = resolve_weight(tape, x, w)?;
    if mode == Mode::Eval || matches!(mix, MixWeight::Const(v) if v == T::one()) {
        return Ok((x, None));
    }
    let mask = DropoutMask::sample(slices, p, rng)?;
    let out = tape.adaptive_mix(x, mix, mask.factors())?;
    Ok((out, Some(mask)))
}

/// Train-mode adaptive dropout with a caller-provided mask.
pub fn adaptive_dropout_with_mask<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    w: DropWeight,
    mask: &DropoutMask,
) -> Result<Var> {
    let mix = resolve_weight(tape, x, w)?;
    tape.adaptive_mix(x, mix, mask.factors())
}

fn resolve_weight<T: Scalar>(tape: &Tape<T>, x: Var, w: DropWeight) -> Result<MixWeight<T>> {
    match w {
        DropWeight::Scalar(v) => {
            check_weight("adaptive_dropout", v)?;
            Ok(MixWeight::Const(T::of(v)))
        }
        DropWeight::Tensor(var) => {
            let wt = tape.value(var);
            if let Some(bad) = wt.data().iter().find(|v| !(T::zero()..=T::one()).contains(*v)) {
                return Err(Error::invalid("adaptive_dropout", format!("weight {bad} outside [0, 1]")));
            }
            let c = tape.value(x).shape()[1];
            match wt.shape() {
                [_, 1] => Ok(MixWeight::PerSample(var)),
                [_, wc] if *wc == c => Ok(MixWeight::PerChannel(var)),
                other => Err(Error::invalid(
                    "adaptive_dropout",
                    format!("weight shape {other:?} is neither [N, 1] nor [N, {c}]"),
                )),
            }
        }
    }
}

/// Bottleneck reduction of the gating network.
pub const DEFAULT_REDUCTION: usize = 4;

/// Initial bias of the last projection; sigmoid(1) is about 0.73.
pub const PREDICTOR_OUTPUT_BIAS: f64 = 1.0;

/// Gating network `sigmoid(f2(relu(f1(avgpool(x)))))`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightPredictor {
    pub f1_weight: ParamId,
    pub f1_bias: ParamId,
    pub f2_weight: ParamId,
    pub f2_bias: ParamId,
    pub channels: usize,
    pub hidden: usize,
    pub format: WeightFormat,
}

impl WeightPredictor {
    /// Registers fresh parameters under `prefix` in `store`.
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        channels: usize,
        reduction: usize,
        format: WeightFormat,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if channels == 0 || reduction == 0 {
            return Err(Error::invalid("weight predictor", "channels and reduction must be positive"));
        }
        let hidden = (channels / reduction).max(1);
        let out = match format {
            WeightFormat::Value => 1,
            WeightFormat::Vector => channels,
        };
        let f1_weight = store.add(format!("{prefix}.f1.weight"), fan_in_uniform(&[hidden, channels], channels, rng));
        let f1_bias = store.add(format!("{prefix}.f1.bias"), fan_in_uniform(&[hidden], channels, rng));
        let f2_weight = store.add(format!("{prefix}.f2.weight"), fan_in_uniform(&[out, hidden], hidden, rng));
        let f2_bias = store.add(format!("{prefix}.f2.bias"), Tensor::full([out], T::of(PREDICTOR_OUTPUT_BIAS)));
        Ok(WeightPredictor { f1_weight, f1_bias, f2_weight, f2_bias, channels, hidden, format })
    }

    /// Predicted weights, `[N, 1]` or `[N, C]`, each in (0, 1).
    pub fn predict<T: Scalar>(&self, tape: &mut Tape<T>, params: &Bound, x: Var) -> Result<Var> {
        let [_, c, _, _] = tape.value(x).dims4("predict_w")?;
        if c != self.channels {
            return Err(Error::ShapeMismatch {
                op: "predict_w",
                dim: "channels",
                expected: self.channels,
                actual: c,
            });
        }
        let pooled = tape.global_avg_pool(x)?;
        let h = tape.linear(pooled, params.get(self.f1_weight), params.get(self.f1_bias))?;
        let h = tape.relu(h);
        let logits = tape.linear(h, params.get(self.f2_weight), params.get(self.f2_bias))?;
        Ok(tape.sigmoid(logits))
    }
}
