//! Degradations against brute-force references and sample statistics.

use adrop_core::dataset::synthetic_image;
use adrop_core::degrade::{
    add_gaussian_noise, bicubic_resize, cubic, gaussian_blur, jpeg_like, second_order_spec, SecondOrderConfig, Step,
};
use adrop_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(h: usize, w: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn([3, h, w], |_| rng.random::<f32>())
}

fn max_abs_diff(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(&x, &y)| (x as f64 - y as f64).abs()).fold(0.0, f64::max)
}

fn l2_diff(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    a.data().iter().zip(b.data()).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>().sqrt()
}

/// Dense evaluation: every output pixel is a weighted sum over the whole
/// input, weights `k(y) k(x)` normalized over the full grid.
fn dense_bicubic(img: &Tensor<f32>, oh: usize, ow: usize) -> Tensor<f32> {
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let (ry, rx) = (h as f64 / oh as f64, w as f64 / ow as f64);
    let d = img.data();
    let mut out = vec![0.0f32; c * oh * ow];
    for ch in 0..c {
        for i in 0..oh {
            for j in 0..ow {
                let cy = (i as f64 + 0.5) * ry - 0.5;
                let cx = (j as f64 + 0.5) * rx - 0.5;
                let (mut acc, mut norm) = (0.0, 0.0);
                for y in 0..h {
                    for x in 0..w {
                        let k = cubic((y as f64 - cy) / ry.max(1.0)) * cubic((x as f64 - cx) / rx.max(1.0));
                        acc += k * d[ch * h * w + y * w + x] as f64;
                        norm += k;
                    }
                }
                out[ch * oh * ow + i * ow + j] = (acc / norm).clamp(0.0, 1.0) as f32;
            }
        }
    }
    Tensor::new([c, oh, ow], out).unwrap()
}

fn mirror(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

/// Direct 2-D convolution with a non-separated Gaussian.
fn dense_blur(img: &Tensor<f32>, sigma: f64) -> Tensor<f32> {
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let r = (3.0 * sigma).ceil() as isize;
    let g = |dy: isize, dx: isize| (-((dy * dy + dx * dx) as f64) / (2.0 * sigma * sigma)).exp();
    let z: f64 = (-r..=r).flat_map(|dy| (-r..=r).map(move |dx| g(dy, dx))).sum();
    let d = img.data();
    Tensor::from_fn([c, h, w], |idx| {
        let (ch, y, x) = (idx / (h * w), (idx / w) % h, idx % w);
        let mut acc = 0.0;
        for dy in -r..=r {
            for dx in -r..=r {
                let (sy, sx) = (mirror(y as isize + dy, h), mirror(x as isize + dx, w));
                acc += g(dy, dx) * d[ch * h * w + sy * w + sx] as f64;
            }
        }
        (acc / z) as f32
    })
}

#[test]
fn bicubic_matches_dense_oracle() {
    for (seed, (oh, ow)) in [(8, 8), (5, 7), (16, 16), (24, 20), (32, 32)].into_iter().enumerate() {
        let img = random_image(16, 16, seed as u64);
        let err = max_abs_diff(&bicubic_resize(&img, oh, ow).unwrap(), &dense_bicubic(&img, oh, ow));
        assert!(err < 1e-5, "{oh}x{ow}: {err:e}");
    }
}

#[test]
fn bicubic_impulse_downscale() {
    let mut img = Tensor::<f32>::zeros([3, 8, 8]);
    for c in 0..3 {
        img.data_mut()[c * 64 + 3 * 8 + 4] = 1.0;
    }
    let err = max_abs_diff(&bicubic_resize(&img, 4, 4).unwrap(), &dense_bicubic(&img, 4, 4));
    assert!(err < 1e-6, "{err:e}");
}

#[test]
fn blur_matches_dense_oracle_and_preserves_sum() {
    for (seed, sigma) in [0.5, 1.0, 1.7, 2.0].into_iter().enumerate() {
        let img = random_image(16, 16, 10 + seed as u64);
        let out = gaussian_blur(&img, sigma).unwrap();
        let err = max_abs_diff(&out, &dense_blur(&img, sigma));
        assert!(err < 1e-5, "sigma {sigma}: {err:e}");
        let (s0, s1): (f64, f64) = (
            img.data().iter().map(|&v| v as f64).sum(),
            out.data().iter().map(|&v| v as f64).sum(),
        );
        assert!(((s1 - s0) / s0).abs() < 1e-5, "sigma {sigma}: sum {s0} -> {s1}");
    }
}

#[test]
fn noise_std_matches_sigma() {
    let img = Tensor::full([1, 1000, 1000], 0.5f32);
    for sigma in [5.0 / 255.0, 15.0 / 255.0, 0.05] {
        let out = add_gaussian_noise(&img, sigma, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let n = out.len() as f64;
        let diffs: Vec<f64> = out.data().iter().map(|&v| v as f64 - 0.5).collect();
        let mean = diffs.iter().sum::<f64>() / n;
        let std = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((std / sigma - 1.0).abs() < 0.02, "sigma {sigma}: std {std}");
    }
}

#[test]
fn jpeg_quality_100_is_nearly_lossless() {
    for seed in 0..5 {
        let img = random_image(19, 24, 20 + seed);
        let err = max_abs_diff(&jpeg_like(&img, 100).unwrap(), &img);
        assert!(err <= 2.0 / 255.0, "seed {seed}: {err}");
    }
}

#[test]
fn jpeg_error_grows_as_quality_drops() {
    let img = synthetic_image(48, 48, 7);
    let e10 = l2_diff(&jpeg_like(&img, 10).unwrap(), &img);
    let e50 = l2_diff(&jpeg_like(&img, 50).unwrap(), &img);
    let e90 = l2_diff(&jpeg_like(&img, 90).unwrap(), &img);
    assert!(e10 >= e50 && e50 >= e90, "{e10} {e50} {e90}");
}

#[test]
fn jpeg_is_nearly_idempotent() {
    for seed in 0..5 {
        let img = random_image(16, 16, 30 + seed);
        for q in [30, 60, 90] {
            let once = jpeg_like(&img, q).unwrap();
            let twice = jpeg_like(&once, q).unwrap();
            assert!(l2_diff(&twice, &once) < l2_diff(&once, &img), "seed {seed} q {q}");
        }
    }
}

#[test]
fn constants_are_fixed_points() {
    for v in [0.0f32, 0.2, 0.5, 1.0] {
        let img = Tensor::full([3, 13, 11], v);
        for sigma in [0.5, 2.0] {
            assert!(max_abs_diff(&gaussian_blur(&img, sigma).unwrap(), &img) < 1e-6);
        }
        for q in [10, 50, 100] {
            assert!(max_abs_diff(&jpeg_like(&img, q).unwrap(), &img) < 1e-6, "v {v} q {q}");
        }
    }
}

#[test]
fn jpeg_rejects_out_of_range_quality() {
    let img = random_image(8, 8, 0);
    assert!(jpeg_like(&img, 9).is_err());
    assert!(jpeg_like(&img, 101).is_err());
}

#[test]
fn second_order_inclusion_frequencies() {
    let cfg = SecondOrderConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let draws = 1000;
    let (mut blur, mut noise, mut jpeg) = (0usize, 0usize, 0usize);
    for _ in 0..draws {
        let spec = second_order_spec(32, 32, 2, &cfg, &mut rng).unwrap();
        assert_eq!(spec.bicubic_steps(), 2);
        for s in &spec.steps {
            match s {
                Step::Blur { .. } => blur += 1,
                Step::Noise { .. } => noise += 1,
                Step::Jpeg { .. } => jpeg += 1,
                Step::Bicubic { .. } => {}
            }
        }
    }
    let passes = (2 * draws) as f64;
    for (name, count) in [("blur", blur), ("noise", noise), ("jpeg", jpeg)] {
        let f = count as f64 / passes;
        assert!((f - 0.5).abs() < 0.05, "{name}: {f}");
    }
}

#[test]
fn second_order_final_size_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for scale in [2, 4] {
        for _ in 0..20 {
            let spec = second_order_spec(48, 40, scale, &SecondOrderConfig::default(), &mut rng).unwrap();
            let last = spec.steps.iter().rev().find_map(|s| match s {
                Step::Bicubic { height, width } => Some((*height, *width)),
                _ => None,
            });
            assert_eq!(last, Some((48 / scale, 40 / scale)));
        }
    }
}
