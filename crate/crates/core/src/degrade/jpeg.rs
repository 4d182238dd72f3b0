//! JPEG-style 8x8 block DCT quantization, applied per RGB channel.
//!
//! AC coefficients are quantized with the standard luminance table scaled
//! by the libjpeg quality rule. The DC coefficient passes through
//! unquantized, so flat regions are reproduced exactly.

use std::f64::consts::PI;
use std::sync::OnceLock;

use super::resize::dims;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Annex K luminance table, row-major.
pub const LUMINANCE_TABLE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

pub const MIN_QUALITY: u32 = 10;
pub const MAX_QUALITY: u32 = 100;

/// Quantization table for `quality` under the libjpeg scaling rule.
pub fn quant_table(quality: u32) -> Result<[f64; 64]> {
    if !(MIN_QUALITY..=MAX_QUALITY).contains(&quality) {
        return Err(Error::invalid(
            "jpeg_like",
            format!("quality {quality} outside [{MIN_QUALITY}, {MAX_QUALITY}]"),
        ));
    }
    let scale = if quality < 50 { 5000 / quality } else { 200 - 2 * quality };
    let mut table = [0.0; 64];
    for (q, &base) in table.iter_mut().zip(&LUMINANCE_TABLE) {
        *q = ((base as u32 * scale + 50) / 100).clamp(1, 255) as f64;
    }
    Ok(table)
}

/// Orthonormal DCT-II basis, `basis[u * 8 + x]`.
fn basis() -> &'static [f64; 64] {
    static BASIS: OnceLock<[f64; 64]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut b = [0.0; 64];
        for u in 0..8 {
            let alpha = if u == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
            for x in 0..8 {
                b[u * 8 + x] = alpha * (((2 * x + 1) as f64 * u as f64 * PI) / 16.0).cos();
            }
        }
        b
    })
}

pub(crate) fn dct8x8(block: &[f64; 64]) -> [f64; 64] {
    let b = basis();
    let mut rows = [0.0; 64];
    for y in 0..8 {
        for u in 0..8 {
            rows[y * 8 + u] = (0..8).map(|x| b[u * 8 + x] * block[y * 8 + x]).sum();
        }
    }
    let mut out = [0.0; 64];
    for v in 0..8 {
        for u in 0..8 {
            out[v * 8 + u] = (0..8).map(|y| b[v * 8 + y] * rows[y * 8 + u]).sum();
        }
    }
    out
}

pub(crate) fn idct8x8(coef: &[f64; 64]) -> [f64; 64] {
    let b = basis();
    let mut cols = [0.0; 64];
    for y in 0..8 {
        for u in 0..8 {
            cols[y * 8 + u] = (0..8).map(|v| b[v * 8 + y] * coef[v * 8 + u]).sum();
        }
    }
    let mut out = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            out[y * 8 + x] = (0..8).map(|u| b[u * 8 + x] * cols[y * 8 + u]).sum();
        }
    }
    out
}

/// Compresses and decompresses a `[C, H, W]` image in `[0, 1]`.
pub fn jpeg_like(img: &Tensor<f32>, quality: u32) -> Result<Tensor<f32>> {
    let table = quant_table(quality)?;
    let [c, h, w] = dims(img, "jpeg_like")?;
    if h == 0 || w == 0 {
        return Err(Error::invalid("jpeg_like", "empty image"));
    }
    let (bh, bw) = (h.div_ceil(8), w.div_ceil(8));
    let mut out = vec![0.0f32; c * h * w];
    for ch in 0..c {
        let plane = &img.data()[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * h * w..(ch + 1) * h * w];
        for by in 0..bh {
            for bx in 0..bw {
                let mut block = [0.0; 64];
                for y in 0..8 {
                    // edge replication for the padded tail
                    let sy = (by * 8 + y).min(h - 1);
                    for x in 0..8 {
                        let sx = (bx * 8 + x).min(w - 1);
                        block[y * 8 + x] = plane[sy * w + sx] as f64 * 255.0 - 128.0;
                    }
                }
                let mut coef = dct8x8(&block);
                for (k, cv) in coef.iter_mut().enumerate().skip(1) {
                    *cv = (*cv / table[k]).round() * table[k];
                }
                let rec = idct8x8(&coef);
                for y in 0..8 {
                    let oy = by * 8 + y;
                    if oy >= h {
                        break;
                    }
                    for x in 0..8 {
                        let ox = bx * 8 + x;
                        if ox >= w {
                            break;
                        }
                        dst[oy * w + ox] = ((rec[y * 8 + x] + 128.0) / 255.0).clamp(0.0, 1.0) as f32;
                    }
                }
            }
        }
    }
    Tensor::new([c, h, w], out)
}
