//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "ADROP1"
//! u32 text length, then UTF-8 `key = value` text: the experiment config
//!     followed by `state.*` lines (iteration, Adam step, mask generators)
//! u32 tensor count, then per tensor: u32 rank, u32 dims, f32 data
//! ```
//!
//! Tensors are the model parameters in declaration order, then the Adam
//! first moments, then the second moments.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{DataConfig, ExperimentConfig};
use crate::error::{Error, Result};
use crate::model::SRNet;
use crate::tensor::Tensor;
use crate::train::{AdamState, Trainer};

pub const MAGIC: &[u8; 6] = b"ADROP1";
const STATE_PREFIX: &str = "state.";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub model_seed: u64,
    /// Next iteration to run.
    pub iter: usize,
    pub block_weights: Vec<Option<f64>>,
    pub rngs: Vec<ChaCha8Rng>,
    pub params: Vec<Tensor<f32>>,
    pub adam: AdamState<f32>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptCheckpoint(msg.into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            corrupt(format!("truncated at byte {} (wanted {n} more of {})", self.pos, self.bytes.len()))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")) as usize)
    }
}

fn rng_text(rng: &ChaCha8Rng) -> String {
    let seed: String = rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
    format!("{seed}:{}:{}", rng.get_stream(), rng.get_word_pos())
}

fn parse_rng(s: &str) -> Result<ChaCha8Rng> {
    let bad = || corrupt(format!("bad generator state `{s}`"));
    let mut parts = s.split(':');
    let (hex, stream, pos) = (parts.next().ok_or_else(bad)?, parts.next().ok_or_else(bad)?, parts.next().ok_or_else(bad)?);
    if hex.len() != 64 || parts.next().is_some() {
        return Err(bad());
    }
    let mut seed = [0u8; 32];
    for (i, b) in seed.iter_mut().enumerate() {
        *b = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream.parse().map_err(|_| bad())?);
    rng.set_word_pos(pos.parse().map_err(|_| bad())?);
    Ok(rng)
}

impl Checkpoint {
    pub fn from_trainer(trainer: &Trainer, data: &DataConfig) -> Self {
        Checkpoint {
            config: ExperimentConfig {
                model: trainer.model.config().clone(),
                train: trainer.cfg.clone(),
                data: data.clone(),
            },
            model_seed: trainer.model.seed(),
            iter: trainer.iter,
            block_weights: trainer.model.block_weights(),
            rngs: trainer.model.rng_states().to_vec(),
            params: trainer.model.params().tensors().to_vec(),
            adam: trainer.adam.clone(),
        }
    }

    fn state_text(&self) -> String {
        let weights: Vec<String> =
            self.block_weights.iter().map(|w| w.map_or_else(|| "learned".to_string(), |w| format!("{w:?}"))).collect();
        let mut s = format!(
            "{STATE_PREFIX}model_seed = {}\n{STATE_PREFIX}iter = {}\n{STATE_PREFIX}adam_step = {}\n{STATE_PREFIX}block_weights = {}\n",
            self.model_seed,
            self.iter,
            self.adam.step,
            weights.join(",")
        );
        for (i, rng) in self.rngs.iter().enumerate() {
            s.push_str(&format!("{STATE_PREFIX}rng{i} = {}\n", rng_text(rng)));
        }
        s
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let text = format!("{}{}", self.config.to_text(), self.state_text());
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        let tensors: Vec<&Tensor<f32>> = self.params.iter().chain(&self.adam.m).chain(&self.adam.v).collect();
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for t in tensors {
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() {
            return Err(corrupt("file shorter than the magic bytes"));
        }
        if &bytes[..MAGIC.len()] != MAGIC {
            let head = String::from_utf8_lossy(&bytes[..MAGIC.len()]).into_owned();
            return Err(if head.starts_with("ADROP") {
                Error::CheckpointVersion(format!("found `{head}`, this build reads `ADROP1`"))
            } else {
                corrupt("bad magic bytes")
            });
        }
        let mut r = Reader { bytes, pos: MAGIC.len() };
        let len = r.u32()?;
        let text = std::str::from_utf8(r.take(len)?).map_err(|_| corrupt("config text is not UTF-8"))?;

        let (mut cfg_text, mut state) = (String::new(), Vec::new());
        for line in text.lines() {
            match line.strip_prefix(STATE_PREFIX) {
                Some(rest) => {
                    let (k, v) = rest.split_once('=').ok_or_else(|| corrupt(format!("bad state line `{line}`")))?;
                    state.push((k.trim().to_string(), v.trim().to_string()));
                }
                None => {
                    cfg_text.push_str(line);
                    cfg_text.push('\n');
                }
            }
        }
        let config = ExperimentConfig::parse(&cfg_text).map_err(|e| corrupt(format!("config: {e}")))?;
        let get = |key: &str| {
            state.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str()).ok_or_else(|| corrupt(format!("missing state.{key}")))
        };
        let num = |key: &str| -> Result<u64> { get(key)?.parse().map_err(|_| corrupt(format!("bad state.{key}"))) };
        let model_seed = num("model_seed")?;
        let iter = num("iter")? as usize;
        let step = num("adam_step")?;
        let block_weights = get("block_weights")?
            .split(',')
            .map(|w| match w {
                "learned" => Ok(None),
                w => w.parse().map(Some).map_err(|_| corrupt(format!("bad block weight `{w}`"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let rngs = (0..=config.model.num_blocks).map(|i| parse_rng(get(&format!("rng{i}"))?)).collect::<Result<Vec<_>>>()?;

        let count = r.u32()?;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let rank = r.u32()?;
            let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| corrupt("tensor size overflow"))?;
            let raw = r.take(n.checked_mul(4).ok_or_else(|| corrupt("tensor size overflow"))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("four bytes"))).collect();
            tensors.push(Tensor::new(shape, data).map_err(|e| corrupt(e.to_string()))?);
        }
        if r.pos != bytes.len() {
            return Err(corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        if count % 3 != 0 {
            return Err(corrupt(format!("{count} tensors is not params + two moment sets")));
        }
        let k = count / 3;
        let v = tensors.split_off(2 * k);
        let m = tensors.split_off(k);
        Ok(Checkpoint { config, model_seed, iter, block_weights, rngs, params: tensors, adam: AdamState { m, v, step } })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    /// Rebuilds the model with saved parameters, weights and generators.
    pub fn model(&self) -> Result<SRNet<f32>> {
        let mut model = SRNet::build(self.config.model.clone(), self.model_seed)?;
        model.params_mut().replace_all(self.params.clone()).map_err(|e| corrupt(format!("parameters: {e}")))?;
        let fixed: Vec<f64> = self.block_weights.iter().map(|w| w.unwrap_or(1.0)).collect();
        model.set_block_weights(&fixed).map_err(|e| corrupt(format!("block weights: {e}")))?;
        model.set_rng_states(self.rngs.clone())?;
        Ok(model)
    }

    pub fn trainer(&self) -> Result<Trainer> {
        let model = self.model()?;
        for (p, (m, v)) in self.params.iter().zip(self.adam.m.iter().zip(&self.adam.v)) {
            if m.shape() != p.shape() || v.shape() != p.shape() {
                return Err(corrupt("optimizer moment shapes differ from the parameters"));
            }
        }
        Trainer::resume(model, self.config.train.clone(), self.adam.clone(), self.iter)
    }
}

pub fn save_checkpoint(trainer: &Trainer, data: &DataConfig, path: &Path) -> Result<()> {
    Checkpoint::from_trainer(trainer, data).save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path)
}
