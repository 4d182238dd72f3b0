//! Image files, a synthetic image generator and LR/HR patch datasets.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::degrade::{apply_combo, parse_combos, second_order_sample, ComboName, DegradationRanges, SecondOrderConfig};
use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::tensor::Tensor;

/// Reads an 8-bit PNG as a `[3, H, W]` tensor in `[0, 1]`.
pub fn load_png(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    Ok(Tensor::from_fn([3, h, w], |i| {
        let (c, rest) = (i / (h * w), i % (h * w));
        raw[rest * 3 + c] as f32 / 255.0
    }))
}

/// Writes a `[3, H, W]` tensor as 8-bit RGB PNG, rounding after clamping.
pub fn save_png(path: &Path, img: &Tensor<f32>) -> Result<()> {
    let [c, h, w] = three_dims(img)?;
    if c != 3 {
        return Err(Error::ShapeMismatch { op: "save_png", dim: "channels", expected: 3, actual: c });
    }
    let d = img.data();
    let mut raw = vec![0u8; h * w * 3];
    for ch in 0..3 {
        for i in 0..h * w {
            raw[i * 3 + ch] = (d[ch * h * w + i].clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    image::save_buffer(path, &raw, w as u32, h as u32, image::ColorType::Rgb8)
        .map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

fn three_dims(img: &Tensor<f32>) -> Result<[usize; 3]> {
    match *img.shape() {
        [c, h, w] => Ok([c, h, w]),
        _ => Err(Error::invalid("image", format!("expected [3, H, W], got {:?}", img.shape()))),
    }
}

/// Rounds through 8 bits, matching a PNG save/load roundtrip.
pub fn quantize8(img: &Tensor<f32>) -> Tensor<f32> {
    let data = img.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0).collect();
    Tensor::new(img.shape().to_vec(), data).expect("same shape")
}

/// All `*.png` files of a directory, sorted by file name.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedImage {
    pub name: String,
    pub image: Tensor<f32>,
}

pub fn load_dir(dir: &Path) -> Result<Vec<NamedImage>> {
    let images: Vec<NamedImage> = list_pngs(dir)?
        .into_iter()
        .map(|p| {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            load_png(&p).map(|image| NamedImage { name, image })
        })
        .collect::<Result<_>>()?;
    if images.is_empty() {
        return Err(Error::EmptyDataset(format!("no PNG files in {}", dir.display())));
    }
    Ok(images)
}

/// A procedural RGB image with smooth shading, oriented gratings and
/// sharp-edged shapes, so that it has content at every scale.
pub fn synthetic_image(h: usize, w: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x5a7]));
    let mut base = [[0.0f64; 3]; 3];
    for row in base.iter_mut() {
        for v in row.iter_mut() {
            *v = rng.random_range(0.15..0.85);
        }
    }
    let gratings: Vec<(f64, f64, f64, [f64; 3])> = (0..3)
        .map(|_| {
            let theta = rng.random_range(0.0..PI);
            let freq = rng.random_range(0.08..0.6);
            let phase = rng.random_range(0.0..2.0 * PI);
            let amp = [rng.random_range(0.02..0.12), rng.random_range(0.02..0.12), rng.random_range(0.02..0.12)];
            (theta, freq, phase, amp)
        })
        .collect();
    enum Shape {
        Disk { cy: f64, cx: f64, r: f64 },
        Rect { y0: f64, x0: f64, y1: f64, x1: f64 },
    }
    let shapes: Vec<(Shape, [f64; 3])> = (0..rng.random_range(3..7))
        .map(|_| {
            let color = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
            let shape = if rng.random_bool(0.5) {
                Shape::Disk {
                    cy: rng.random_range(0.0..h as f64),
                    cx: rng.random_range(0.0..w as f64),
                    r: rng.random_range(0.08..0.3) * h.min(w) as f64,
                }
            } else {
                let (y0, x0) = (rng.random_range(0.0..h as f64), rng.random_range(0.0..w as f64));
                Shape::Rect {
                    y0,
                    x0,
                    y1: y0 + rng.random_range(0.1..0.4) * h as f64,
                    x1: x0 + rng.random_range(0.1..0.4) * w as f64,
                }
            };
            (shape, color)
        })
        .collect();

    let mut out = vec![0.0f32; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let (u, v) = (y as f64 / h.max(1) as f64, x as f64 / w.max(1) as f64);
            let mut px = [0.0; 3];
            for c in 0..3 {
                px[c] = base[c][0] + (base[c][1] - base[c][0]) * u * 0.5 + (base[c][2] - base[c][0]) * v * 0.5;
            }
            for &(theta, freq, phase, amp) in &gratings {
                let s = (freq * (y as f64 * theta.cos() + x as f64 * theta.sin()) + phase).sin();
                for c in 0..3 {
                    px[c] += amp[c] * s;
                }
            }
            for (shape, color) in &shapes {
                let inside = match *shape {
                    Shape::Disk { cy, cx, r } => (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2) <= r * r,
                    Shape::Rect { y0, x0, y1, x1 } => (y0..y1).contains(&(y as f64)) && (x0..x1).contains(&(x as f64)),
                };
                if inside {
                    for c in 0..3 {
                        px[c] = 0.35 * px[c] + 0.65 * color[c];
                    }
                }
            }
            for c in 0..3 {
                out[c * h * w + y * w + x] = px[c].clamp(0.0, 1.0) as f32;
            }
        }
    }
    quantize8(&Tensor::new([3, h, w], out).expect("shape matches"))
}

/// `count` synthetic images named `synth_000.png`, ... .
pub fn synthetic_set(count: usize, h: usize, w: usize, seed: u64) -> Vec<NamedImage> {
    (0..count)
        .map(|i| NamedImage { name: format!("synth_{i:03}.png"), image: synthetic_image(h, w, derive_seed(seed, &[i as u64])) })
        .collect()
}

/// How LR training inputs are synthesized from HR patches.
#[derive(Clone, Debug, PartialEq)]
pub enum TrainDegradation {
    /// Each patch gets one combo, cycling through the list.
    Combos(Vec<ComboName>),
    SecondOrder(SecondOrderConfig),
}

impl Default for TrainDegradation {
    fn default() -> Self {
        TrainDegradation::Combos(vec![ComboName::Clean, ComboName::Blur])
    }
}

impl fmt::Display for TrainDegradation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainDegradation::SecondOrder(_) => f.write_str("second_order"),
            TrainDegradation::Combos(list) => {
                let names: Vec<&str> = list.iter().map(|c| c.as_str()).collect();
                f.write_str(&names.join(","))
            }
        }
    }
}

impl FromStr for TrainDegradation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim() == "second_order" {
            return Ok(TrainDegradation::SecondOrder(SecondOrderConfig::default()));
        }
        let list = parse_combos(s)?;
        if list.is_empty() {
            return Err("empty combo list".into());
        }
        Ok(TrainDegradation::Combos(list))
    }
}

/// Pre-cropped `(LR, HR)` patch pairs, `[3, P, P]` and `[3, sP, sP]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairDataset {
    pub lr: Vec<Tensor<f32>>,
    pub hr: Vec<Tensor<f32>>,
    pub scale: usize,
}

impl PairDataset {
    /// Crops `patches_per_image` random HR patches of side `patch * scale`
    /// from each image and degrades them. Patch `j` of image `i` uses the
    /// stream `derive_seed(seed, [i, j])`.
    pub fn from_images(
        images: &[NamedImage],
        scale: usize,
        patch: usize,
        patches_per_image: usize,
        degradation: &TrainDegradation,
        seed: u64,
    ) -> Result<Self> {
        if images.is_empty() || patches_per_image == 0 {
            return Err(Error::EmptyDataset("no training patches requested".into()));
        }
        if let TrainDegradation::Combos(list) = degradation {
            if list.is_empty() {
                return Err(Error::invalid("dataset", "empty combo list"));
            }
        }
        let hp = patch * scale;
        let ranges = DegradationRanges::default();
        let (mut lr, mut hr) = (Vec::new(), Vec::new());
        for (i, named) in images.iter().enumerate() {
            let [_, h, w] = three_dims(&named.image)?;
            if h < hp || w < hp {
                return Err(Error::invalid(
                    "dataset",
                    format!("{} is {h}x{w}, smaller than the {hp}x{hp} HR patch", named.name),
                ));
            }
            for j in 0..patches_per_image {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[i as u64, j as u64]));
                let (y0, x0) = (rng.random_range(0..=h - hp), rng.random_range(0..=w - hp));
                let crop = crop(&named.image, y0, x0, hp, hp)?;
                let degraded = match degradation {
                    TrainDegradation::Combos(list) => {
                        let name = list[(i * patches_per_image + j) % list.len()];
                        apply_combo(&crop, name, scale, &ranges, &mut rng)?
                    }
                    TrainDegradation::SecondOrder(cfg) => second_order_sample(&crop, scale, cfg, &mut rng)?,
                };
                lr.push(degraded.image);
                hr.push(crop);
            }
        }
        Ok(PairDataset { lr, hr, scale })
    }

    pub fn len(&self) -> usize {
        self.lr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lr.is_empty()
    }

    /// Stacks the selected pairs into `[N, 3, P, P]` and `[N, 3, sP, sP]`.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<f32>, Tensor<f32>)> {
        if self.is_empty() {
            return Err(Error::EmptyDataset("training set".into()));
        }
        let lr: Vec<Tensor<f32>> = indices.iter().map(|&i| self.lr[i].clone()).collect();
        let hr: Vec<Tensor<f32>> = indices.iter().map(|&i| self.hr[i].clone()).collect();
        Ok((Tensor::stack(&lr)?, Tensor::stack(&hr)?))
    }
}

/// Copies the `[.., y0..y0+h, x0..x0+w]` window of a `[C, H, W]` image.
pub fn crop(img: &Tensor<f32>, y0: usize, x0: usize, h: usize, w: usize) -> Result<Tensor<f32>> {
    let [c, ih, iw] = three_dims(img)?;
    if y0 + h > ih || x0 + w > iw {
        return Err(Error::invalid("crop", format!("window {h}x{w} at ({y0}, {x0}) exceeds {ih}x{iw}")));
    }
    let d = img.data();
    Ok(Tensor::from_fn([c, h, w], |i| {
        let (ch, rest) = (i / (h * w), i % (h * w));
        d[ch * ih * iw + (y0 + rest / w) * iw + x0 + rest % w]
    }))
}

/// Crops to the largest size divisible by `scale`, anchored top-left.
pub fn crop_to_multiple(img: &Tensor<f32>, scale: usize) -> Result<Tensor<f32>> {
    let [_, h, w] = three_dims(img)?;
    crop(img, 0, 0, h - h % scale, w - w % scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip_is_lossless_for_quantized_images() {
        let dir = tempfile::tempdir().unwrap();
        let img = synthetic_image(12, 10, 3);
        let path = dir.path().join("a.png");
        save_png(&path, &img).unwrap();
        assert_eq!(load_png(&path).unwrap(), img);
    }

    #[test]
    fn synthetic_images_are_seeded_and_in_range() {
        let a = synthetic_image(16, 16, 1);
        assert_eq!(a, synthetic_image(16, 16, 1));
        assert_ne!(a, synthetic_image(16, 16, 2));
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn patch_dataset_shapes() {
        let images = synthetic_set(2, 24, 24, 0);
        let ds = PairDataset::from_images(&images, 2, 8, 3, &TrainDegradation::default(), 5).unwrap();
        assert_eq!(ds.len(), 6);
        let (lr, hr) = ds.batch(&[0, 5]).unwrap();
        assert_eq!(lr.shape(), &[2, 3, 8, 8]);
        assert_eq!(hr.shape(), &[2, 3, 16, 16]);
        assert_eq!(ds, PairDataset::from_images(&images, 2, 8, 3, &TrainDegradation::default(), 5).unwrap());
    }

    #[test]
    fn patch_larger_than_image_is_an_error() {
        let images = synthetic_set(1, 8, 8, 0);
        assert!(PairDataset::from_images(&images, 2, 8, 1, &TrainDegradation::default(), 0).is_err());
    }

    #[test]
    fn degradation_names_parse() {
        assert_eq!("clean,blur".parse::<TrainDegradation>().unwrap(), TrainDegradation::default());
        assert_eq!(TrainDegradation::default().to_string(), "clean,blur");
        assert!(matches!("second_order".parse::<TrainDegradation>().unwrap(), TrainDegradation::SecondOrder(_)));
    }

    #[test]
    fn crop_window() {
        let img = Tensor::from_fn([3, 4, 4], |i| i as f32);
        let c = crop(&img, 1, 2, 2, 2).unwrap();
        assert_eq!(c.data(), &[6.0, 7.0, 10.0, 11.0, 22.0, 23.0, 26.0, 27.0, 38.0, 39.0, 42.0, 43.0]);
        assert!(crop(&img, 3, 3, 2, 2).is_err());
    }
}
