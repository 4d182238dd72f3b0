//! 2-D cross-correlation via im2col + gemm.

use super::{gemm, Mat, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy)]
struct Geometry {
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn patch_len(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn out_area(&self) -> usize {
        self.oh * self.ow
    }
}

fn geometry<T: Scalar>(x: &Tensor<T>, kernel: &Tensor<T>, padding: usize) -> Result<(usize, usize, Geometry)> {
    let [n, c_in, h, w] = x.dims4("conv2d")?;
    let [c_out, k_in, kh, kw] = kernel.dims4("conv2d")?;
    if k_in != c_in {
        return Err(Error::ShapeMismatch { op: "conv2d", dim: "input channels", expected: k_in, actual: c_in });
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::invalid("conv2d", format!("kernel {kh}x{kw} must have odd extents")));
    }
    if h + 2 * padding < kh || w + 2 * padding < kw {
        return Err(Error::invalid(
            "conv2d",
            format!("input {h}x{w} with padding {padding} is smaller than kernel {kh}x{kw}"),
        ));
    }
    let oh = h + 2 * padding - kh + 1;
    let ow = w + 2 * padding - kw + 1;
    Ok((n, c_out, Geometry { c_in, h, w, kh, kw, pad: padding, oh, ow }))
}

/// Unfolds one image `[C, H, W]` into `[C*kh*kw, oh*ow]`.
fn im2col<T: Scalar>(img: &[T], g: &Geometry, col: &mut [T]) {
    let area = g.out_area();
    for ci in 0..g.c_in {
        let plane = &img[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut col[row * area..(row + 1) * area];
                for oy in 0..g.oh {
                    let iy = oy as isize + ky as isize - g.pad as isize;
                    let out_row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in out_row.iter_mut().enumerate() {
                        let ix = ox as isize + kx as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back and accumulates into `img`.
fn col2im<T: Scalar>(col: &[T], g: &Geometry, img: &mut [T]) {
    let area = g.out_area();
    for ci in 0..g.c_in {
        let plane = &mut img[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &col[row * area..(row + 1) * area];
                for oy in 0..g.oh {
                    let iy = oy as isize + ky as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, &v) in src[oy * g.ow..(oy + 1) * g.ow].iter().enumerate() {
                        let ix = ox as isize + kx as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] = dst[ix as usize] + v;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    padding: usize,
) -> Result<Tensor<T>> {
    let (n, c_out, g) = geometry(x, kernel, padding)?;
    if bias.len() != c_out {
        return Err(Error::ShapeMismatch { op: "conv2d", dim: "bias length", expected: c_out, actual: bias.len() });
    }
    let (k_len, area) = (g.patch_len(), g.out_area());
    let in_stride = g.c_in * g.h * g.w;
    let mut out = vec![T::zero(); n * c_out * area];
    let mut col = vec![T::zero(); k_len * area];
    for b in 0..n {
        im2col(&x.data()[b * in_stride..(b + 1) * in_stride], &g, &mut col);
        let dst = &mut out[b * c_out * area..(b + 1) * c_out * area];
        for (co, plane) in dst.chunks_mut(area).enumerate() {
            plane.fill(bias.data()[co]);
        }
        gemm(Mat::new(kernel.data(), c_out, k_len), Mat::new(&col, k_len, area), T::one(), dst);
    }
    Tensor::new([n, c_out, g.oh, g.ow], out)
}

type ConvGrads<T> = (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>);

/// Returns `(dx, dkernel, dbias)`, computing only what is requested.
pub(crate) fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    g_out: &[T],
    padding: usize,
    want_input: bool,
    want_params: bool,
) -> Result<ConvGrads<T>> {
    let (n, c_out, g) = geometry(x, kernel, padding)?;
    let (k_len, area) = (g.patch_len(), g.out_area());
    let in_stride = g.c_in * g.h * g.w;
    let mut dx = want_input.then(|| vec![T::zero(); x.len()]);
    let mut dk = want_params.then(|| vec![T::zero(); kernel.len()]);
    let mut db = want_params.then(|| vec![T::zero(); c_out]);
    let mut col = vec![T::zero(); k_len * area];
    for b in 0..n {
        let go = &g_out[b * c_out * area..(b + 1) * c_out * area];
        if let (Some(dk), Some(db)) = (dk.as_mut(), db.as_mut()) {
            im2col(&x.data()[b * in_stride..(b + 1) * in_stride], &g, &mut col);
            gemm(Mat::new(go, c_out, area), Mat::new(&col, k_len, area).t(), T::one(), dk);
            for (co, plane) in go.chunks(area).enumerate() {
                db[co] = db[co] + plane.iter().copied().sum::<T>();
            }
        }
        if let Some(dx) = dx.as_mut() {
            gemm(Mat::new(kernel.data(), c_out, k_len).t(), Mat::new(go, c_out, area), T::zero(), &mut col);
            col2im(&col, &g, &mut dx[b * in_stride..(b + 1) * in_stride]);
        }
    }
    Ok((dx, dk, db))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_kernel_is_identity() {
        let x = Tensor::<f32>::from_fn([1, 1, 3, 3], |i| i as f32 * 0.5 - 1.0);
        let k = Tensor::<f32>::full([1, 1, 1, 1], 1.0);
        let y = conv2d_forward(&x, &k, &Tensor::zeros([1]), 0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_input_gives_bias() {
        let x = Tensor::<f32>::zeros([2, 3, 4, 4]);
        let k = Tensor::<f32>::from_fn([2, 3, 3, 3], |i| (i as f32).sin());
        let b = Tensor::<f32>::new([2], vec![0.25, -1.5]).unwrap();
        let y = conv2d_forward(&x, &k, &b, 1).unwrap();
        assert_eq!(y.shape(), &[2, 2, 4, 4]);
        for (i, &v) in y.data().iter().enumerate() {
            assert_eq!(v, b.data()[(i / 16) % 2]);
        }
    }

    #[test]
    fn matches_direct_correlation() {
        let x = Tensor::<f64>::from_fn([1, 2, 5, 4], |i| ((i * 7) % 11) as f64 - 5.0);
        let k = Tensor::<f64>::from_fn([3, 2, 3, 3], |i| ((i * 5) % 7) as f64 * 0.1 - 0.3);
        let b = Tensor::<f64>::new([3], vec![0.1, 0.2, 0.3]).unwrap();
        let y = conv2d_forward(&x, &k, &b, 1).unwrap();
        let xd = x.data();
        let kd = k.data();
        for co in 0..3 {
            for oy in 0..5 {
                for ox in 0..4 {
                    let mut acc = b.data()[co];
                    for ci in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = oy as isize + ky as isize - 1;
                                let ix = ox as isize + kx as isize - 1;
                                if (0..5).contains(&iy) && (0..4).contains(&ix) {
                                    acc += kd[((co * 2 + ci) * 3 + ky) * 3 + kx]
                                        * xd[(ci * 5 + iy as usize) * 4 + ix as usize];
                                }
                            }
                        }
                    }
                    let got = y.data()[(co * 5 + oy) * 4 + ox];
                    assert!((got - acc).abs() < 1e-12, "{got} vs {acc}");
                }
            }
        }
    }

    #[test]
    fn shape_errors_name_the_dimension() {
        let x = Tensor::<f32>::zeros([1, 2, 4, 4]);
        let k = Tensor::<f32>::zeros([1, 3, 3, 3]);
        let err = conv2d_forward(&x, &k, &Tensor::zeros([1]), 1).unwrap_err();
        assert!(err.to_string().contains("input channels"), "{err}");
        let even = Tensor::<f32>::zeros([1, 2, 2, 2]);
        assert!(conv2d_forward(&x, &even, &Tensor::zeros([1]), 1).is_err());
        let k_ok = Tensor::<f32>::zeros([1, 2, 3, 3]);
        let err = conv2d_forward(&x, &k_ok, &Tensor::zeros([2]), 1).unwrap_err();
        assert!(err.to_string().contains("bias"), "{err}");
    }
}
