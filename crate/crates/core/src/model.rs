//! SRResNet-style network with one adaptive dropout per residual block.
//!
//! ```text
//! head conv 3->C
//!   -> B x [conv -> leaky relu -> conv -> adaptive dropout -> + skip]
//!   -> upsampler (conv C->4C -> pixel shuffle x2 -> leaky relu, once or twice)
//!   -> channel dropout -> final conv C->3
//! ```
//!
//! Each block and the final dropout own a ChaCha8 generator seeded from the
//! model seed and the layer index (`layer = block index`, the final dropout
//! is layer `B`), so mask streams do not depend on each other.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dropout::{
    adaptive_dropout, channel_dropout, DropWeight, DropoutConfig, DropoutVariant, Mode, WeightFormat,
    WeightFormatPolicy, WeightPredictor, DEFAULT_REDUCTION,
};
use crate::error::{Error, Result};
use crate::nn::{fan_in_uniform, Bound, ParamId, ParamStore};
use crate::seed::derive_seed;
use crate::tensor::{Scalar, Tape, Tensor, Var};

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub num_blocks: usize,
    pub channels: usize,
    pub scale: usize,
    pub dropout: DropoutConfig,
    /// First block that uses vector weights in the implicit variant.
    /// Defaults to `num_blocks / 2`.
    pub midpoint_split: Option<usize>,
    pub final_dropout_p: f64,
    pub reduction: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_blocks: 4,
            channels: 16,
            scale: 2,
            dropout: DropoutConfig::default(),
            midpoint_split: None,
            final_dropout_p: 0.5,
            reduction: DEFAULT_REDUCTION,
        }
    }
}

impl ModelConfig {
    pub fn midpoint(&self) -> usize {
        self.midpoint_split.unwrap_or(self.num_blocks / 2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_blocks < 2 {
            return Err(Error::invalid("model config", format!("num_blocks = {} must be at least 2", self.num_blocks)));
        }
        if self.channels == 0 {
            return Err(Error::invalid("model config", "channels must be positive"));
        }
        if !matches!(self.scale, 2 | 4) {
            return Err(Error::invalid("model config", format!("scale factor {} is not 2 or 4", self.scale)));
        }
        if self.midpoint() > self.num_blocks {
            return Err(Error::invalid(
                "model config",
                format!("midpoint_split {} exceeds num_blocks {}", self.midpoint(), self.num_blocks),
            ));
        }
        crate::dropout::check_rate("model config", self.final_dropout_p)?;
        self.dropout.validate()
    }

    /// Weight format of block `index` under the implicit variant.
    pub fn block_format(&self, index: usize) -> WeightFormat {
        match self.dropout.w_format {
            WeightFormatPolicy::Value => WeightFormat::Value,
            WeightFormatPolicy::Vector => WeightFormat::Vector,
            WeightFormatPolicy::Split if index < self.midpoint() => WeightFormat::Value,
            WeightFormatPolicy::Split => WeightFormat::Vector,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BlockWeight {
    Fixed(f64),
    Predicted(WeightPredictor),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBlock {
    pub index: usize,
    pub conv1: (ParamId, ParamId),
    pub conv2: (ParamId, ParamId),
    pub weight: BlockWeight,
}

/// Per-layer mode overrides for a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerModes {
    pub blocks: Vec<Mode>,
    pub final_dropout: Mode,
}

impl LayerModes {
    pub fn uniform(num_blocks: usize, mode: Mode) -> Self {
        LayerModes { blocks: vec![mode; num_blocks], final_dropout: mode }
    }

    /// Only block `index` is stochastic.
    pub fn only_block(num_blocks: usize, index: usize) -> Self {
        let mut blocks = vec![Mode::Eval; num_blocks];
        blocks[index] = Mode::Train;
        LayerModes { blocks, final_dropout: Mode::Eval }
    }
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub output: Var,
    /// Post-block features (after the skip add), in block order.
    pub taps: Vec<Var>,
    /// Each block's regularized branch, right after its adaptive dropout.
    pub regularized: Vec<Var>,
    /// Predicted weights for implicit blocks.
    pub predicted: Vec<Option<Var>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SRNet<T = f32> {
    config: ModelConfig,
    seed: u64,
    params: ParamStore<T>,
    head: (ParamId, ParamId),
    blocks: Vec<ResidualBlock>,
    upsampler: Vec<(ParamId, ParamId)>,
    last: (ParamId, ParamId),
    rngs: Vec<ChaCha8Rng>,
    mask_draws: Vec<u64>,
}

fn conv_params<T: Scalar>(
    store: &mut ParamStore<T>,
    name: &str,
    c_out: usize,
    c_in: usize,
    zero: bool,
    rng: &mut ChaCha8Rng,
) -> (ParamId, ParamId) {
    let fan_in = c_in * 9;
    let (w, b) = if zero {
        (Tensor::zeros([c_out, c_in, 3, 3]), Tensor::zeros([c_out]))
    } else {
        (fan_in_uniform(&[c_out, c_in, 3, 3], fan_in, rng), fan_in_uniform(&[c_out], fan_in, rng))
    };
    (store.add(format!("{name}.weight"), w), store.add(format!("{name}.bias"), b))
}

impl<T: Scalar> SRNet<T> {
    /// Builds a freshly initialized model. Deterministic in `seed`.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x1417]));
        let mut params = ParamStore::new();
        let c = config.channels;
        let head = conv_params(&mut params, "head", c, 3, false, &mut rng);
        let mut blocks = Vec::with_capacity(config.num_blocks);
        for index in 0..config.num_blocks {
            let conv1 = conv_params(&mut params, &format!("block{index}.conv1"), c, c, false, &mut rng);
            let conv2 = conv_params(&mut params, &format!("block{index}.conv2"), c, c, true, &mut rng);
            let weight = match config.dropout.initial_weight() {
                Some(w) => BlockWeight::Fixed(w),
                None => BlockWeight::Predicted(WeightPredictor::init(
                    &mut params,
                    &format!("block{index}.predictor"),
                    c,
                    config.reduction,
                    config.block_format(index),
                    &mut rng,
                )?),
            };
            blocks.push(ResidualBlock { index, conv1, conv2, weight });
        }
        let stages = if config.scale == 4 { 2 } else { 1 };
        let upsampler = (0..stages)
            .map(|i| conv_params(&mut params, &format!("up{i}"), 4 * c, c, false, &mut rng))
            .collect();
        let last = conv_params(&mut params, "tail", 3, c, false, &mut rng);
        let layers = config.num_blocks + 1;
        let rngs = (0..layers)
            .map(|layer| ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0xd10, layer as u64])))
            .collect();
        Ok(SRNet { config, seed, params, head, blocks, upsampler, last, rngs, mask_draws: vec![0; layers] })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn blocks(&self) -> &[ResidualBlock] {
        &self.blocks
    }

    pub fn head_params(&self) -> (ParamId, ParamId) {
        self.head
    }

    /// Current fixed weight of each block; `None` for predicted blocks.
    pub fn block_weights(&self) -> Vec<Option<f64>> {
        self.blocks
            .iter()
            .map(|b| match b.weight {
                BlockWeight::Fixed(w) => Some(w),
                BlockWeight::Predicted(_) => None,
            })
            .collect()
    }

    /// Overwrites fixed block weights; predicted blocks are left alone.
    pub fn set_block_weights(&mut self, weights: &[f64]) -> Result<()> {
        if weights.len() != self.blocks.len() {
            return Err(Error::ShapeMismatch {
                op: "set_block_weights",
                dim: "block count",
                expected: self.blocks.len(),
                actual: weights.len(),
            });
        }
        for (block, &w) in self.blocks.iter_mut().zip(weights) {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::invalid("set_block_weights", format!("w = {w} outside [0, 1]")));
            }
            if let BlockWeight::Fixed(cur) = &mut block.weight {
                *cur = w;
            }
        }
        Ok(())
    }

    /// Masks drawn so far by each layer (blocks, then the final dropout).
    pub fn mask_draws(&self) -> &[u64] {
        &self.mask_draws
    }

    pub fn rng_states(&self) -> &[ChaCha8Rng] {
        &self.rngs
    }

    pub fn set_rng_states(&mut self, rngs: Vec<ChaCha8Rng>) -> Result<()> {
        if rngs.len() != self.rngs.len() {
            return Err(Error::ShapeMismatch {
                op: "set_rng_states",
                dim: "layer count",
                expected: self.rngs.len(),
                actual: rngs.len(),
            });
        }
        self.rngs = rngs;
        Ok(())
    }

    /// Copy in another precision, including the mask generators.
    pub fn cast<U: Scalar>(&self) -> SRNet<U> {
        SRNet {
            config: self.config.clone(),
            seed: self.seed,
            params: self.params.cast(),
            head: self.head,
            blocks: self.blocks.clone(),
            upsampler: self.upsampler.clone(),
            last: self.last,
            rngs: self.rngs.clone(),
            mask_draws: self.mask_draws.clone(),
        }
    }

    /// Re-draws the zero-initialized second conv of every block.
    pub fn randomize_residual_convs(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x2e5]));
        let c = self.config.channels;
        for block in &self.blocks {
            let (w, b) = block.conv2;
            *self.params.get_mut(w) = fan_in_uniform(&[c, c, 3, 3], c * 9, &mut rng);
            *self.params.get_mut(b) = fan_in_uniform(&[c], c * 9, &mut rng);
        }
    }

    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Bound {
        self.params.bind(tape, trainable)
    }

    pub fn forward(&mut self, tape: &mut Tape<T>, params: &Bound, x: Var, mode: Mode) -> Result<Var> {
        Ok(self.forward_with_taps(tape, params, x, mode)?.output)
    }

    pub fn forward_with_taps(
        &mut self,
        tape: &mut Tape<T>,
        params: &Bound,
        x: Var,
        mode: Mode,
    ) -> Result<ForwardOutput> {
        let modes = LayerModes::uniform(self.blocks.len(), mode);
        self.forward_layers(tape, params, x, &modes)
    }

    pub fn forward_layers(
        &mut self,
        tape: &mut Tape<T>,
        params: &Bound,
        x: Var,
        modes: &LayerModes,
    ) -> Result<ForwardOutput> {
        let [_, c_in, _, _] = tape.value(x).dims4("forward")?;
        if c_in != 3 {
            return Err(Error::ShapeMismatch { op: "forward", dim: "input channels", expected: 3, actual: c_in });
        }
        let h = tape.conv2d(x, params.get(self.head.0), params.get(self.head.1), 1)?;
        check_finite(tape, h, "head")?;
        self.forward_from(tape, params, 0, h, modes)
    }

    /// Runs blocks `start..B` and the tail on feature `h`.
    pub fn forward_from(
        &mut self,
        tape: &mut Tape<T>,
        params: &Bound,
        start: usize,
        mut h: Var,
        modes: &LayerModes,
    ) -> Result<ForwardOutput> {
        if modes.blocks.len() != self.blocks.len() {
            return Err(Error::ShapeMismatch {
                op: "forward",
                dim: "block modes",
                expected: self.blocks.len(),
                actual: modes.blocks.len(),
            });
        }
        let slope = T::of(LEAKY_SLOPE);
        let mut out = ForwardOutput { output: h, taps: Vec::new(), regularized: Vec::new(), predicted: Vec::new() };
        let p = self.config.dropout.p;
        for i in start..self.blocks.len() {
            let block = &self.blocks[i];
            let t = tape.conv2d(h, params.get(block.conv1.0), params.get(block.conv1.1), 1)?;
            let t = tape.leaky_relu(t, slope);
            let branch = tape.conv2d(t, params.get(block.conv2.0), params.get(block.conv2.1), 1)?;
            let (weight, predicted) = match &block.weight {
                BlockWeight::Fixed(w) => (DropWeight::Scalar(*w), None),
                BlockWeight::Predicted(pred) => {
                    let w = pred.predict(tape, params, branch)?;
                    (DropWeight::Tensor(w), Some(w))
                }
            };
            let (reg, mask) = adaptive_dropout(tape, branch, weight, p, &mut self.rngs[i], modes.blocks[i])?;
            if mask.is_some() {
                self.mask_draws[i] += 1;
            }
            h = tape.add(h, reg)?;
            check_finite(tape, h, &format!("block {i}"))?;
            out.taps.push(h);
            out.regularized.push(reg);
            out.predicted.push(predicted);
        }
        for &(w, b) in &self.upsampler {
            let u = tape.conv2d(h, params.get(w), params.get(b), 1)?;
            let u = tape.pixel_shuffle(u, 2)?;
            h = tape.leaky_relu(u, slope);
        }
        check_finite(tape, h, "upsampler")?;
        let last_layer = self.blocks.len();
        if modes.final_dropout == Mode::Train && self.config.final_dropout_p > 0.0 {
            h = channel_dropout(tape, h, self.config.final_dropout_p, &mut self.rngs[last_layer], Mode::Train)?;
            self.mask_draws[last_layer] += 1;
        }
        let y = tape.conv2d(h, params.get(self.last.0), params.get(self.last.1), 1)?;
        check_finite(tape, y, "tail")?;
        out.output = y;
        Ok(out)
    }

    /// Eval-mode super-resolution of a batch `[N, 3, h, w]`.
    pub fn upscale(&mut self, lr: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape, false);
        let x = tape.constant(lr.clone());
        let y = self.forward(&mut tape, &params, x, Mode::Eval)?;
        Ok(tape.value(y).clone())
    }

    pub fn variant(&self) -> DropoutVariant {
        self.config.dropout.variant
    }
}

fn check_finite<T: Scalar>(tape: &Tape<T>, v: Var, stage: &str) -> Result<()> {
    if tape.value(v).is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteActivation { stage: stage.to_string() })
    }
}
