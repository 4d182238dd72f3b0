//! Synthetic degradations for building LR/HR training and test pairs.
//!
//! Images are `[3, H, W]` tensors in `[0, 1]`. Every pipeline is a pure
//! function of its inputs and an explicit seed.

mod jpeg;
mod resize;

pub use jpeg::{jpeg_like, quant_table, LUMINANCE_TABLE, MAX_QUALITY, MIN_QUALITY};
pub use resize::{bicubic_resize, cubic, downscale, CUBIC_A};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use resize::dims;

/// Half-sample symmetric index: `... c b a | a b c ... | c b a ...`.
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Normalized Gaussian taps over `[-radius, radius]`, `radius = ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius).map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Separable Gaussian blur with symmetric (edge-including) reflection.
pub fn gaussian_blur(img: &Tensor<f32>, sigma: f64) -> Result<Tensor<f32>> {
    let [c, h, w] = dims(img, "gaussian_blur")?;
    if !(sigma >= 0.0) {
        return Err(Error::invalid("gaussian_blur", format!("sigma = {sigma} must be non-negative")));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let mut out = Vec::with_capacity(c * h * w);
    let mut tmp = vec![0.0f64; h * w];
    for plane in img.data().chunks(h * w) {
        for y in 0..h {
            for x in 0..w {
                tmp[y * w + x] = k
                    .iter()
                    .enumerate()
                    .map(|(j, &kv)| kv * plane[y * w + reflect(x as isize + j as isize - r, w)] as f64)
                    .sum();
            }
        }
        for y in 0..h {
            for x in 0..w {
                let v: f64 = k
                    .iter()
                    .enumerate()
                    .map(|(j, &kv)| kv * tmp[reflect(y as isize + j as isize - r, h) * w + x])
                    .sum();
                out.push(v as f32);
            }
        }
    }
    Tensor::new([c, h, w], out)
}

/// Adds `Normal(0, sigma_n^2)` to every element, then clamps to `[0, 1]`.
pub fn add_gaussian_noise(img: &Tensor<f32>, sigma_n: f64, rng: &mut impl RngCore) -> Result<Tensor<f32>> {
    if !(sigma_n >= 0.0) {
        return Err(Error::invalid("add_gaussian_noise", format!("sigma_n = {sigma_n} must be non-negative")));
    }
    if sigma_n == 0.0 {
        return Ok(img.clone());
    }
    let normal = Normal::new(0.0, sigma_n).map_err(|e| Error::invalid("add_gaussian_noise", e.to_string()))?;
    let data = img
        .data()
        .iter()
        .map(|&v| (v as f64 + normal.sample(rng)).clamp(0.0, 1.0) as f32)
        .collect();
    Tensor::new(img.shape().to_vec(), data)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Step {
    /// Resize to an exact target size.
    Bicubic { height: usize, width: usize },
    Blur { sigma: f64 },
    Noise { sigma: f64 },
    Jpeg { quality: u32 },
}

/// Ordered degradation steps. `seed` drives the noise steps.
#[derive(Clone, Debug, PartialEq)]
pub struct DegradationSpec {
    pub steps: Vec<Step>,
    pub seed: u64,
}

impl DegradationSpec {
    pub fn apply(&self, img: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut cur = img.clone();
        for step in &self.steps {
            cur = match *step {
                Step::Bicubic { height, width } => bicubic_resize(&cur, height, width)?,
                Step::Blur { sigma } => gaussian_blur(&cur, sigma)?,
                Step::Noise { sigma } => add_gaussian_noise(&cur, sigma, &mut rng)?,
                Step::Jpeg { quality } => jpeg_like(&cur, quality)?,
            };
        }
        Ok(cur)
    }

    pub fn bicubic_steps(&self) -> usize {
        self.steps.iter().filter(|s| matches!(s, Step::Bicubic { .. })).count()
    }

    pub fn blur_sigma(&self) -> Option<f64> {
        self.steps.iter().find_map(|s| match s {
            Step::Blur { sigma } => Some(*sigma),
            _ => None,
        })
    }

    pub fn noise_sigma(&self) -> Option<f64> {
        self.steps.iter().find_map(|s| match s {
            Step::Noise { sigma } => Some(*sigma),
            _ => None,
        })
    }

    pub fn quality(&self) -> Option<u32> {
        self.steps.iter().find_map(|s| match s {
            Step::Jpeg { quality } => Some(*quality),
            _ => None,
        })
    }
}

/// Parameter ranges the combo and second-order samplers draw from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DegradationRanges {
    pub blur_sigma: (f64, f64),
    pub noise_sigma: (f64, f64),
    pub quality: (u32, u32),
}

impl Default for DegradationRanges {
    fn default() -> Self {
        DegradationRanges { blur_sigma: (0.5, 2.0), noise_sigma: (5.0 / 255.0, 25.0 / 255.0), quality: (50, 90) }
    }
}

/// One of the eight named test degradations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ComboName {
    Clean,
    Blur,
    Noise,
    Jpeg,
    BlurNoise,
    BlurJpeg,
    NoiseJpeg,
    BlurNoiseJpeg,
}

impl ComboName {
    pub const ALL: [ComboName; 8] = [
        ComboName::Clean,
        ComboName::Blur,
        ComboName::Noise,
        ComboName::Jpeg,
        ComboName::BlurNoise,
        ComboName::BlurJpeg,
        ComboName::NoiseJpeg,
        ComboName::BlurNoiseJpeg,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ComboName::Clean => "clean",
            ComboName::Blur => "blur",
            ComboName::Noise => "noise",
            ComboName::Jpeg => "jpeg",
            ComboName::BlurNoise => "b+n",
            ComboName::BlurJpeg => "b+j",
            ComboName::NoiseJpeg => "n+j",
            ComboName::BlurNoiseJpeg => "b+n+j",
        }
    }

    /// `(blur, noise, jpeg)` membership.
    pub fn parts(self) -> (bool, bool, bool) {
        match self {
            ComboName::Clean => (false, false, false),
            ComboName::Blur => (true, false, false),
            ComboName::Noise => (false, true, false),
            ComboName::Jpeg => (false, false, true),
            ComboName::BlurNoise => (true, true, false),
            ComboName::BlurJpeg => (true, false, true),
            ComboName::NoiseJpeg => (false, true, true),
            ComboName::BlurNoiseJpeg => (true, true, true),
        }
    }

    /// Expands to a concrete spec for an `h x w` HR image, drawing parameters
    /// from `ranges`. Steps run blur, bicubic, noise, jpeg.
    pub fn spec(
        self,
        h: usize,
        w: usize,
        scale: usize,
        ranges: &DegradationRanges,
        rng: &mut impl Rng,
    ) -> Result<DegradationSpec> {
        check_divisible(h, w, scale)?;
        let (blur, noise, jpeg) = self.parts();
        let mut steps = Vec::with_capacity(4);
        if blur {
            steps.push(Step::Blur { sigma: rng.random_range(ranges.blur_sigma.0..=ranges.blur_sigma.1) });
        }
        steps.push(Step::Bicubic { height: h / scale, width: w / scale });
        if noise {
            steps.push(Step::Noise { sigma: rng.random_range(ranges.noise_sigma.0..=ranges.noise_sigma.1) });
        }
        if jpeg {
            steps.push(Step::Jpeg { quality: rng.random_range(ranges.quality.0..=ranges.quality.1) });
        }
        Ok(DegradationSpec { steps, seed: rng.random() })
    }
}

impl fmt::Display for ComboName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ComboName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ComboName::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown degradation combo `{s}`"))
    }
}

/// Parses `all` or a comma-separated combo list.
pub fn parse_combos(s: &str) -> Result<Vec<ComboName>, String> {
    if s.trim() == "all" {
        return Ok(ComboName::ALL.to_vec());
    }
    s.split(',').map(|p| p.trim().parse()).collect()
}

fn check_divisible(h: usize, w: usize, scale: usize) -> Result<()> {
    if scale == 0 || h % scale != 0 || w % scale != 0 || h < scale || w < scale {
        return Err(Error::invalid(
            "degrade",
            format!("HR size {h}x{w} is not divisible by scale {scale}"),
        ));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Degraded {
    pub image: Tensor<f32>,
    pub spec: DegradationSpec,
}

/// Degrades `hr` with a named combo; parameters are drawn once from `rng`.
pub fn apply_combo(
    hr: &Tensor<f32>,
    name: ComboName,
    scale: usize,
    ranges: &DegradationRanges,
    rng: &mut impl Rng,
) -> Result<Degraded> {
    let [_, h, w] = dims(hr, "apply_combo")?;
    let spec = name.spec(h, w, scale, ranges, rng)?;
    Ok(Degraded { image: spec.apply(hr)?, spec })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SecondOrderConfig {
    /// Probability that blur, noise and jpeg are each included in a pass.
    pub include_prob: f64,
    pub ranges: DegradationRanges,
}

impl Default for SecondOrderConfig {
    fn default() -> Self {
        SecondOrderConfig { include_prob: 0.5, ranges: DegradationRanges::default() }
    }
}

/// Two randomized passes of `blur? -> resize -> noise? -> jpeg?`.
///
/// The overall shrink factor `scale` is split across the passes: the first
/// resizes to `round(H / sqrt(scale))`, the second to exactly `H / scale`.
pub fn second_order_spec(
    h: usize,
    w: usize,
    scale: usize,
    cfg: &SecondOrderConfig,
    rng: &mut impl Rng,
) -> Result<DegradationSpec> {
    check_divisible(h, w, scale)?;
    let root = (scale as f64).sqrt();
    let mid = (
        ((h as f64 / root).round() as usize).clamp(h / scale, h),
        ((w as f64 / root).round() as usize).clamp(w / scale, w),
    );
    let targets = [mid, (h / scale, w / scale)];
    let r = cfg.ranges;
    let mut steps = Vec::new();
    for (height, width) in targets {
        let blur = rng.random_bool(cfg.include_prob);
        let noise = rng.random_bool(cfg.include_prob);
        let jpeg = rng.random_bool(cfg.include_prob);
        if blur {
            steps.push(Step::Blur { sigma: rng.random_range(r.blur_sigma.0..=r.blur_sigma.1) });
        }
        steps.push(Step::Bicubic { height, width });
        if noise {
            steps.push(Step::Noise { sigma: rng.random_range(r.noise_sigma.0..=r.noise_sigma.1) });
        }
        if jpeg {
            steps.push(Step::Jpeg { quality: rng.random_range(r.quality.0..=r.quality.1) });
        }
    }
    Ok(DegradationSpec { steps, seed: rng.random() })
}

pub fn second_order_sample(
    hr: &Tensor<f32>,
    scale: usize,
    cfg: &SecondOrderConfig,
    rng: &mut impl Rng,
) -> Result<Degraded> {
    let [_, h, w] = dims(hr, "second_order_sample")?;
    let spec = second_order_spec(h, w, scale, cfg, rng)?;
    Ok(Degraded { image: spec.apply(hr)?, spec })
}
