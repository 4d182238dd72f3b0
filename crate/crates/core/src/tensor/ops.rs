use super::{gemm, Mat, Scalar, Tensor};
use crate::error::{Error, Result};

pub(crate) fn map<T: Scalar>(x: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    let data = x.data().iter().map(|&v| f(v)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("map preserves shape")
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::invalid(
            op,
            format!("shapes {:?} and {:?} differ", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

pub(crate) fn linear_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [n, d_in] = rank2("linear", x)?;
    let [d_out, w_in] = rank2("linear", weight)?;
    if w_in != d_in {
        return Err(Error::ShapeMismatch { op: "linear", dim: "input features", expected: w_in, actual: d_in });
    }
    if bias.len() != d_out {
        return Err(Error::ShapeMismatch { op: "linear", dim: "bias length", expected: d_out, actual: bias.len() });
    }
    let mut out = Vec::with_capacity(n * d_out);
    for _ in 0..n {
        out.extend_from_slice(bias.data());
    }
    gemm(Mat::new(x.data(), n, d_in), Mat::new(weight.data(), d_out, d_in).t(), T::one(), &mut out);
    Tensor::new([n, d_out], out)
}

pub(crate) fn linear_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    g: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (n, d_in) = (x.shape()[0], x.shape()[1]);
    let d_out = weight.shape()[0];
    let mut dx = vec![T::zero(); n * d_in];
    gemm(Mat::new(g, n, d_out), Mat::new(weight.data(), d_out, d_in), T::zero(), &mut dx);
    let mut dw = vec![T::zero(); d_out * d_in];
    gemm(Mat::new(g, n, d_out).t(), Mat::new(x.data(), n, d_in), T::zero(), &mut dw);
    let mut db = vec![T::zero(); d_out];
    for row in g.chunks(d_out) {
        db.iter_mut().zip(row).for_each(|(a, &b)| *a = *a + b);
    }
    (dx, dw, db)
}

fn rank2<T: Scalar>(op: &'static str, t: &Tensor<T>) -> Result<[usize; 2]> {
    match t.shape()[..] {
        [a, b] => Ok([a, b]),
        _ => Err(Error::ShapeMismatch { op, dim: "rank", expected: 2, actual: t.shape().len() }),
    }
}

pub(crate) fn global_avg_pool_forward<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4("global_avg_pool")?;
    if h == 0 || w == 0 {
        return Err(Error::invalid("global_avg_pool", "spatial size must be at least 1x1"));
    }
    let area = T::of((h * w) as f64);
    let data = x.data().chunks(h * w).map(|plane| plane.iter().copied().sum::<T>() / area).collect();
    Tensor::new([n, c], data)
}

pub(crate) fn global_avg_pool_backward<T: Scalar>(x: &Tensor<T>, g: &[T]) -> Vec<T> {
    let hw = x.shape()[2] * x.shape()[3];
    let area = T::of(hw as f64);
    g.iter().flat_map(|&gv| std::iter::repeat_n(gv / area, hw)).collect()
}

pub(crate) fn pixel_shuffle_forward<T: Scalar>(x: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    let [n, cs2, h, w] = x.dims4("pixel_shuffle")?;
    if s == 0 || cs2 % (s * s) != 0 {
        return Err(Error::invalid(
            "pixel_shuffle",
            format!("channel count {cs2} is not divisible by scale^2 = {}", s * s),
        ));
    }
    let c = cs2 / (s * s);
    let mut out = vec![T::zero(); x.len()];
    let src = x.data();
    for_each_shuffle_index(n, c, h, w, s, |dst, from| out[dst] = src[from]);
    Tensor::new([n, c, h * s, w * s], out)
}

pub(crate) fn pixel_shuffle_backward<T: Scalar>(x: &Tensor<T>, g: &[T], s: usize) -> Vec<T> {
    let [n, cs2, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let mut dx = vec![T::zero(); x.len()];
    for_each_shuffle_index(n, cs2 / (s * s), h, w, s, |dst, from| dx[from] = g[dst]);
    dx
}

/// Calls `f(output_index, input_index)` for the depth-to-space permutation
/// `out[n, c, y*s + i, x*s + j] = in[n, c*s*s + i*s + j, y, x]`.
fn for_each_shuffle_index(
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    s: usize,
    mut f: impl FnMut(usize, usize),
) {
    let (oh, ow) = (h * s, w * s);
    for b in 0..n {
        for ch in 0..c {
            for i in 0..s {
                for j in 0..s {
                    let src_c = ch * s * s + i * s + j;
                    let src_base = (b * c * s * s + src_c) * h * w;
                    for y in 0..h {
                        let dst_row = ((b * c + ch) * oh + y * s + i) * ow;
                        for xx in 0..w {
                            f(dst_row + xx * s + j, src_base + y * w + xx);
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn channel_scale_forward<T: Scalar>(x: &Tensor<T>, factors: &[T]) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4("channel_scale")?;
    if factors.len() != n * c {
        return Err(Error::ShapeMismatch { op: "channel_scale", dim: "mask length", expected: n * c, actual: factors.len() });
    }
    let data = x
        .data()
        .chunks(h * w)
        .zip(factors)
        .flat_map(|(plane, &f)| plane.iter().map(move |&v| v * f))
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

pub(crate) fn channel_scale_backward<T: Scalar>(x: &Tensor<T>, g: &[T], factors: &[T]) -> Vec<T> {
    let hw = x.shape()[2] * x.shape()[3];
    g.chunks(hw)
        .zip(factors)
        .flat_map(|(plane, &f)| plane.iter().map(move |&v| v * f))
        .collect()
}

pub(crate) enum MixView<'a, T> {
    Const(T),
    PerSample(&'a Tensor<T>),
    PerChannel(&'a Tensor<T>),
}

impl<T: Scalar> MixView<'_, T> {
    fn check(&self, n: usize, c: usize) -> Result<()> {
        let (shape, expected): (&[usize], [usize; 2]) = match self {
            MixView::Const(_) => return Ok(()),
            MixView::PerSample(t) => (t.shape(), [n, 1]),
            MixView::PerChannel(t) => (t.shape(), [n, c]),
        };
        if shape != expected {
            return Err(Error::invalid(
                "adaptive_dropout",
                format!("weight shape {shape:?} does not match expected {expected:?}"),
            ));
        }
        Ok(())
    }

    /// Weight for the slice `(n, c)` given channel count `c_total`.
    fn at(&self, b: usize, ch: usize, c_total: usize) -> T {
        match self {
            MixView::Const(v) => *v,
            MixView::PerSample(t) => t.data()[b],
            MixView::PerChannel(t) => t.data()[b * c_total + ch],
        }
    }
}

pub(crate) fn adaptive_mix_forward<T: Scalar>(
    x: &Tensor<T>,
    w: MixView<'_, T>,
    factors: &[T],
) -> Result<Tensor<T>> {
    let [n, c, h, hw_w] = x.dims4("adaptive_dropout")?;
    w.check(n, c)?;
    if factors.len() != n * c {
        return Err(Error::ShapeMismatch { op: "adaptive_dropout", dim: "mask length", expected: n * c, actual: factors.len() });
    }
    let hw = h * hw_w;
    let mut out = Vec::with_capacity(x.len());
    for (slice, plane) in x.data().chunks(hw).enumerate() {
        let (b, ch) = (slice / c, slice % c);
        let wv = w.at(b, ch, c);
        let k = wv + (T::one() - wv) * factors[slice];
        out.extend(plane.iter().map(|&v| v * k));
    }
    Tensor::new(x.shape().to_vec(), out)
}

pub(crate) fn adaptive_mix_backward<T: Scalar>(
    x: &Tensor<T>,
    w: MixView<'_, T>,
    factors: &[T],
    g: &[T],
) -> (Vec<T>, Option<Vec<T>>) {
    let (n, c) = (x.shape()[0], x.shape()[1]);
    let hw = x.shape()[2] * x.shape()[3];
    let mut dx = Vec::with_capacity(x.len());
    let mut dw = match w {
        MixView::Const(_) => None,
        MixView::PerSample(_) => Some(vec![T::zero(); n]),
        MixView::PerChannel(_) => Some(vec![T::zero(); n * c]),
    };
    for (slice, (xs, gs)) in x.data().chunks(hw).zip(g.chunks(hw)).enumerate() {
        let (b, ch) = (slice / c, slice % c);
        let wv = w.at(b, ch, c);
        let f = factors[slice];
        let k = wv + (T::one() - wv) * f;
        dx.extend(gs.iter().map(|&gv| gv * k));
        if let Some(dw) = dw.as_mut() {
            let dot: T = xs.iter().zip(gs).map(|(&a, &b)| a * b).sum();
            let idx = match w {
                MixView::PerSample(_) => b,
                _ => slice,
            };
            dw[idx] = dw[idx] + dot * (T::one() - f);
        }
    }
    (dx, dw)
}
