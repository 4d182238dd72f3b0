//! Separable bicubic resampling with kernel stretching when downscaling.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Keys' cubic convolution coefficient.
pub const CUBIC_A: f64 = -0.5;

pub fn cubic(x: f64) -> f64 {
    let a = CUBIC_A;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Source taps for one output coordinate.
#[derive(Clone, Debug)]
pub(crate) struct Taps {
    pub start: usize,
    pub weights: Vec<f64>,
}

/// Normalized 1-D weights mapping `in_len` samples onto `out_len`.
///
/// Output `i` is centred at `(i + 0.5) * in / out - 0.5`. When shrinking,
/// the kernel is widened by `in / out`. Taps falling outside the signal are
/// dropped and the rest renormalized.
pub(crate) fn taps(in_len: usize, out_len: usize) -> Vec<Taps> {
    let ratio = in_len as f64 / out_len as f64;
    let stretch = ratio.max(1.0);
    let support = 2.0 * stretch;
    (0..out_len)
        .map(|i| {
            let center = (i as f64 + 0.5) * ratio - 0.5;
            let lo = ((center - support).floor() as isize).max(0) as usize;
            let hi = ((center + support).ceil() as isize).min(in_len as isize - 1).max(0) as usize;
            let mut weights: Vec<f64> = (lo..=hi).map(|j| cubic((j as f64 - center) / stretch)).collect();
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= total);
            Taps { start: lo, weights }
        })
        .collect()
}

fn image_dims(img: &Tensor<f32>, op: &'static str) -> Result<[usize; 3]> {
    match img.shape()[..] {
        [c, h, w] => Ok([c, h, w]),
        _ => Err(Error::ShapeMismatch { op, dim: "rank", expected: 3, actual: img.shape().len() }),
    }
}

pub(crate) fn dims(img: &Tensor<f32>, op: &'static str) -> Result<[usize; 3]> {
    image_dims(img, op)
}

/// Resizes a `[C, H, W]` image to `[C, out_h, out_w]`, clamping to `[0, 1]`.
pub fn bicubic_resize(img: &Tensor<f32>, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
    let [c, h, w] = image_dims(img, "bicubic_resize")?;
    if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
        return Err(Error::invalid(
            "bicubic_resize",
            format!("degenerate resize {h}x{w} -> {out_h}x{out_w}"),
        ));
    }
    let rows = taps(h, out_h);
    let cols = taps(w, out_w);
    let mut out = Vec::with_capacity(c * out_h * out_w);
    let mut tmp = vec![0.0f64; h * out_w];
    for plane in img.data().chunks(h * w) {
        // horizontal pass
        for y in 0..h {
            let src = &plane[y * w..(y + 1) * w];
            for (x, t) in cols.iter().enumerate() {
                tmp[y * out_w + x] =
                    t.weights.iter().enumerate().map(|(k, &wt)| wt * src[t.start + k] as f64).sum();
            }
        }
        // vertical pass
        for t in &rows {
            for x in 0..out_w {
                let v: f64 = t.weights.iter().enumerate().map(|(k, &wt)| wt * tmp[(t.start + k) * out_w + x]).sum();
                out.push(v.clamp(0.0, 1.0) as f32);
            }
        }
    }
    Tensor::new([c, out_h, out_w], out)
}

/// Shrinks by an integer factor; dims must divide evenly.
pub fn downscale(img: &Tensor<f32>, factor: usize) -> Result<Tensor<f32>> {
    let [_, h, w] = image_dims(img, "downscale")?;
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::invalid(
            "downscale",
            format!("image {h}x{w} is not divisible by scale {factor}"),
        ));
    }
    bicubic_resize(img, h / factor, w / factor)
}
